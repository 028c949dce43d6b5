//! Nearest-centroid genus classifier on a handful of shape, tone and
//! texture features measured from a normalized crop.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::GenusCatalog;
use crate::error::{Error, Result};
use crate::preprocess::NormalizedCrop;
use crate::raster::Raster;
use crate::types::ProbabilityVector;

use super::detector::{label_components, otsu_threshold};

pub const FEATURE_COUNT: usize = 4;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = ["length_px", "aspect", "mean_tone", "texture"];

pub type Features = [f64; FEATURE_COUNT];

fn gray_at(r: &Raster, x: u32, y: u32) -> f64 {
    let p = r.pixel(x, y);
    p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64
}

/// Measures the largest dark object inside the crop's content region:
/// principal-axis length in level-0 pixels, axis ratio, mean gray value and
/// mean absolute Laplacian over interior pixels.
pub fn crop_features(crop: &NormalizedCrop) -> Features {
    let c = crop.content;
    let (w, h) = (c.width().max(0) as u32, c.height().max(0) as u32);
    if w == 0 || h == 0 {
        return [0.0, 1.0, 255.0, 0.0];
    }
    let (x0, y0) = (c.x_min as u32, c.y_min as u32);
    let gray: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| gray_at(&crop.raster, x0 + x, y0 + y))
        .collect();
    let mut hist = [0u64; 256];
    for &g in &gray {
        hist[255 - g.round() as usize] += 1;
    }
    let t = otsu_threshold(&hist) as f64;
    let mask: Vec<bool> = gray.iter().map(|&g| 255.0 - g.round() > t).collect();
    let (labels, comps) = label_components(&mask, w, h);
    let Some((best, _)) = comps.iter().enumerate().max_by_key(|(i, c)| (c.area, usize::MAX - i)) else {
        let mean = gray.iter().sum::<f64>() / gray.len() as f64;
        return [0.0, 1.0, mean, 0.0];
    };
    let id = best as u32 + 1;
    let inside = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && labels[(y as usize) * w as usize + x as usize] == id
    };

    let (mut n, mut sx, mut sy, mut tone) = (0f64, 0f64, 0f64, 0f64);
    for y in 0..h {
        for x in 0..w {
            if labels[(y * w + x) as usize] == id {
                n += 1.0;
                sx += x as f64;
                sy += y as f64;
                tone += gray[(y * w + x) as usize];
            }
        }
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cyy, mut cxy) = (0f64, 0f64, 0f64);
    let (mut lap_sum, mut lap_n) = (0f64, 0f64);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if !inside(x, y) {
                continue;
            }
            let (dx, dy) = (x as f64 - mx, y as f64 - my);
            cxx += dx * dx;
            cyy += dy * dy;
            cxy += dx * dy;
            if inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1) {
                let g = |x: i64, y: i64| gray[(y as usize) * w as usize + x as usize];
                let lap = 4.0 * g(x, y) - g(x - 1, y) - g(x + 1, y) - g(x, y - 1) - g(x, y + 1);
                lap_sum += lap.abs();
                lap_n += 1.0;
            }
        }
    }
    // pixel squares carry 1/12 variance along each axis
    let (cxx, cyy, cxy) = (cxx / n + 1.0 / 12.0, cyy / n + 1.0 / 12.0, cxy / n);
    let tr = cxx + cyy;
    let disc = ((cxx - cyy) * (cxx - cyy) / 4.0 + cxy * cxy).sqrt();
    let l1 = tr / 2.0 + disc;
    let l2 = (tr / 2.0 - disc).max(1e-9);
    let length = 4.0 * l1.sqrt() / crop.scale;
    let aspect = (l1 / l2).sqrt();
    let texture = if lap_n > 0.0 { lap_sum / lap_n } else { 0.0 };
    [length, aspect, tone / n, texture]
}

/// Per-genus feature centroids in standardized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidClassifier {
    genera: Vec<String>,
    mean: Features,
    scale: Features,
    /// `None` for genera without training samples; they always score 0.
    centroids: Vec<Option<Features>>,
    /// Softmax temperature over negative distances.
    temperature: f64,
    trained_on_macerations: BTreeSet<String>,
}

impl CentroidClassifier {
    /// Untrained classifier; classifying with it is an error.
    pub fn new(catalog: &GenusCatalog) -> Self {
        Self {
            genera: catalog.names().to_vec(),
            mean: [0.0; FEATURE_COUNT],
            scale: [1.0; FEATURE_COUNT],
            centroids: vec![None; catalog.len()],
            temperature: 1.0,
            trained_on_macerations: BTreeSet::new(),
        }
    }

    /// Fits centroids from `(class index, features)` samples.
    pub fn fit(
        catalog: &GenusCatalog,
        samples: &[(usize, Features)],
        macerations: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("no training samples".into()));
        }
        let n = samples.len() as f64;
        let mut mean = [0.0; FEATURE_COUNT];
        let mut scale = [0.0; FEATURE_COUNT];
        for (class, f) in samples {
            if *class >= catalog.len() {
                return Err(Error::OutOfRange(format!("class index {class}")));
            }
            for k in 0..FEATURE_COUNT {
                mean[k] += f[k] / n;
            }
        }
        for (_, f) in samples {
            for k in 0..FEATURE_COUNT {
                scale[k] += (f[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = s.sqrt().max(1e-9);
        }
        let mut sums = vec![([0.0; FEATURE_COUNT], 0usize); catalog.len()];
        for (class, f) in samples {
            let entry = &mut sums[*class];
            for k in 0..FEATURE_COUNT {
                entry.0[k] += (f[k] - mean[k]) / scale[k];
            }
            entry.1 += 1;
        }
        let centroids = sums
            .into_iter()
            .map(|(s, c)| (c > 0).then(|| s.map(|v| v / c as f64)))
            .collect();
        Ok(Self {
            genera: catalog.names().to_vec(),
            mean,
            scale,
            centroids,
            temperature: 1.0,
            trained_on_macerations: macerations.into_iter().collect(),
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Invalid("temperature must be positive".into()));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn genera(&self) -> &[String] {
        &self.genera
    }

    pub fn is_trained(&self) -> bool {
        self.centroids.iter().any(Option::is_some)
    }

    pub fn trained_on_macerations(&self) -> &BTreeSet<String> {
        &self.trained_on_macerations
    }

    pub fn classify_features(&self, f: &Features) -> Result<ProbabilityVector> {
        if !self.is_trained() {
            return Err(Error::Untrained);
        }
        let z: Vec<f64> = (0..FEATURE_COUNT).map(|k| (f[k] - self.mean[k]) / self.scale[k]).collect();
        let dist: Vec<Option<f64>> = self
            .centroids
            .iter()
            .map(|c| {
                c.map(|c| {
                    c.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                })
            })
            .collect();
        let d_min = dist.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
        let weights = dist
            .iter()
            .map(|d| d.map_or(0.0, |d| (-(d - d_min) / self.temperature).exp()))
            .collect();
        ProbabilityVector::from_weights(weights)
    }

    pub fn classify(&self, crop: &NormalizedCrop) -> Result<ProbabilityVector> {
        self.classify_features(&crop_features(crop))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text)?;
        if c.centroids.len() != c.genera.len() {
            return Err(Error::LengthMismatch {
                expected: c.genera.len(),
                actual: c.centroids.len(),
            });
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BBox;

    fn ellipse_crop(len: f64, wid: f64, tone: u8) -> NormalizedCrop {
        let (w, h) = (120u32, 80u32);
        let raster = Raster::from_fn(w, h, 1, |x, y, _| {
            let dx = (x as f64 + 0.5 - 60.0) / (len / 2.0);
            let dy = (y as f64 + 0.5 - 40.0) / (wid / 2.0);
            if dx * dx + dy * dy <= 1.0 {
                tone
            } else {
                235
            }
        });
        NormalizedCrop {
            raster,
            content: BBox::from_xywh(0, 0, w as i64, h as i64),
            scale: 0.5,
        }
    }

    #[test]
    fn features_of_an_ellipse() {
        let f = crop_features(&ellipse_crop(100.0, 20.0, 60));
        // a filled ellipse has principal-axis std a/2, so length ~ 2a / scale
        assert!((f[0] - 200.0).abs() < 4.0, "{f:?}");
        assert!((f[1] - 5.0).abs() < 0.3, "{f:?}");
        assert_eq!(f[2], 60.0);
        assert_eq!(f[3], 0.0);
    }

    #[test]
    fn untrained_is_an_error() {
        let cat = GenusCatalog::default();
        let c = CentroidClassifier::new(&cat);
        assert!(matches!(c.classify_features(&[0.0; 4]), Err(Error::Untrained)));
    }

    #[test]
    fn nearest_centroid_wins_and_untrained_genera_score_zero() {
        let cat = GenusCatalog::default();
        let samples = vec![
            (0, [100.0, 3.0, 80.0, 5.0]),
            (0, [110.0, 3.2, 82.0, 5.5]),
            (4, [300.0, 6.0, 120.0, 1.0]),
            (4, [320.0, 6.5, 118.0, 1.2]),
        ];
        let c = CentroidClassifier::fit(&cat, &samples, ["m1".to_string()]).unwrap();
        let p = c.classify_features(&[105.0, 3.1, 81.0, 5.2]).unwrap();
        assert_eq!(p.argmax().unwrap(), 0);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert_eq!(p.scores()[1], 0.0);
        let q = c.classify_features(&[310.0, 6.2, 119.0, 1.1]).unwrap();
        assert_eq!(q.argmax().unwrap(), 4);
        assert!(c.trained_on_macerations().contains("m1"));
    }

    #[test]
    fn save_load_roundtrip() {
        let cat = GenusCatalog::default();
        let c = CentroidClassifier::fit(&cat, &[(2, [1.0, 2.0, 3.0, 4.0])], []).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classifier.json");
        c.save(&path).unwrap();
        assert_eq!(CentroidClassifier::load(&path).unwrap(), c);
    }
}
