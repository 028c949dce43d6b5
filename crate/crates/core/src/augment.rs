//! Training-data augmentation: mosaic, HSV and photometric jitter,
//! shift/scale/flip, and class-preserving transforms for crops.
//!
//! Every function is a pure function of its inputs and seed. Boxes follow
//! pixels through the same affine map; a remapped box is the integer hull
//! of the mapped source box, so any output pixel that draws on a source
//! pixel inside a box lies inside the remapped box.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{AxisMap, Raster};
use crate::scalar::to_u8;
use crate::types::BBox;

/// Remapped boxes keeping less than this share of their mapped area after
/// clipping are dropped.
pub const DEFAULT_MIN_KEEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox,
    #[serde(default)]
    pub label: Option<String>,
}

impl LabeledBox {
    pub fn new(bbox: BBox, label: Option<&str>) -> Self {
        Self {
            bbox,
            label: label.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Raster,
    pub boxes: Vec<LabeledBox>,
}

/// Inclusive range a parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(Error::Invalid(format!("range {name} [{}, {}]", self.min, self.max)))
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

/// Maps `[lo, hi)` through `x -> scale * x + offset` to its integer hull.
fn map_interval(lo: i64, hi: i64, scale: f64, offset: f64) -> (i64, i64) {
    let a = scale * lo as f64 + offset;
    let b = scale * hi as f64 + offset;
    (a.floor() as i64, b.ceil() as i64)
}

/// Maps a box and clips it to `region`; `None` when it keeps less than
/// `min_keep` of its mapped area.
fn map_box(b: &BBox, scale: f64, tx: f64, ty: f64, region: &BBox, min_keep: f64) -> Option<BBox> {
    let (x0, x1) = map_interval(b.x_min, b.x_max, scale, tx);
    let (y0, y1) = map_interval(b.y_min, b.y_max, scale, ty);
    let mapped = BBox {
        x_min: x0,
        y_min: y0,
        x_max: x1,
        y_max: y1,
    };
    let clipped = mapped.clip(region)?;
    if (clipped.area() as f64) < min_keep * mapped.area() as f64 {
        return None;
    }
    Some(clipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosaicConfig {
    /// Square canvas side in pixels.
    pub canvas: u32,
    /// Largest offset of the junction from the canvas center, per axis.
    pub center_jitter: u32,
    pub seed: u64,
    #[serde(default = "default_min_keep")]
    pub min_keep: f64,
}

fn default_min_keep() -> f64 {
    DEFAULT_MIN_KEEP
}

impl MosaicConfig {
    pub fn new(canvas: u32, center_jitter: u32, seed: u64) -> Self {
        Self {
            canvas,
            center_jitter,
            seed,
            min_keep: DEFAULT_MIN_KEEP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas < 2 {
            return Err(Error::Invalid("mosaic canvas must be at least 2 px".into()));
        }
        if 2 * self.center_jitter >= self.canvas {
            return Err(Error::Invalid(format!(
                "center jitter {} must be below half the canvas {}",
                self.center_jitter, self.canvas
            )));
        }
        Ok(())
    }
}

/// Placement of one mosaic source: canvas pixel = `scale * source + (tx, ty)`,
/// visible inside `quadrant`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrantMap {
    pub quadrant: BBox,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

/// Junction and per-source placement for a mosaic of the given source sizes.
pub fn mosaic_layout(sizes: [(u32, u32); 4], cfg: &MosaicConfig) -> Result<[QuadrantMap; 4]> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let j = cfg.center_jitter as i64;
    let c = cfg.canvas as i64;
    let jx = c / 2 + if j > 0 { rng.random_range(-j..=j) } else { 0 };
    let jy = c / 2 + if j > 0 { rng.random_range(-j..=j) } else { 0 };
    let quads = [
        BBox { x_min: 0, y_min: 0, x_max: jx, y_max: jy },
        BBox { x_min: jx, y_min: 0, x_max: c, y_max: jy },
        BBox { x_min: 0, y_min: jy, x_max: jx, y_max: c },
        BBox { x_min: jx, y_min: jy, x_max: c, y_max: c },
    ];
    let mut out = [QuadrantMap { quadrant: quads[0], scale: 1.0, tx: 0.0, ty: 0.0 }; 4];
    for (k, q) in quads.iter().enumerate() {
        let (w, h) = sizes[k];
        if w == 0 || h == 0 {
            return Err(Error::Invalid(format!("mosaic source {k} is empty")));
        }
        let scale = (q.width() as f64 / w as f64).max(q.height() as f64 / h as f64);
        // the source corner nearest the junction stays on the junction
        let tx = if k % 2 == 0 { jx as f64 - scale * w as f64 } else { jx as f64 };
        let ty = if k < 2 { jy as f64 - scale * h as f64 } else { jy as f64 };
        out[k] = QuadrantMap { quadrant: *q, scale, tx, ty };
    }
    Ok(out)
}

/// Combines four samples into one canvas: top-left, top-right, bottom-left,
/// bottom-right. Each source is scaled uniformly to cover its quadrant and
/// cropped at the quadrant edges away from the junction.
pub fn mosaic(samples: &[Sample], cfg: &MosaicConfig) -> Result<Sample> {
    if samples.len() < 4 {
        return Err(Error::Invalid(format!("mosaic needs 4 samples, got {}", samples.len())));
    }
    let samples = &samples[..4];
    let channels = samples[0].image.channels();
    if samples.iter().any(|s| s.image.channels() != channels) {
        return Err(Error::Invalid("mosaic samples differ in channel count".into()));
    }
    let sizes = [0, 1, 2, 3].map(|k| samples[k].image.dims());
    let layout = mosaic_layout(sizes, cfg)?;
    let mut canvas = Raster::new(cfg.canvas, cfg.canvas, channels);
    let mut boxes = Vec::new();
    for (s, m) in samples.iter().zip(&layout) {
        let q = m.quadrant;
        if q.area() == 0 {
            continue;
        }
        let xs = AxisMap::affine_area(s.image.width(), q.width() as u32, m.scale, m.tx - q.x_min as f64);
        let ys = AxisMap::affine_area(s.image.height(), q.height() as u32, m.scale, m.ty - q.y_min as f64);
        canvas.paste(&s.image.resample(&xs, &ys, 0), q.x_min, q.y_min);
        for b in &s.boxes {
            if let Some(bb) = map_box(&b.bbox, m.scale, m.tx, m.ty, &q, cfg.min_keep) {
                boxes.push(LabeledBox { bbox: bb, label: b.label.clone() });
            }
        }
    }
    Ok(Sample { image: canvas, boxes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotometricConfig {
    /// Hue rotation in degrees.
    pub hue_delta: Range,
    pub saturation_scale: Range,
    pub value_scale: Range,
    /// Added to every channel, as a fraction of full scale.
    pub brightness_delta: Range,
    /// Stretch around the image mean.
    pub contrast_scale: Range,
}

impl PhotometricConfig {
    pub const IDENTITY: Self = Self {
        hue_delta: Range::fixed(0.0),
        saturation_scale: Range::fixed(1.0),
        value_scale: Range::fixed(1.0),
        brightness_delta: Range::fixed(0.0),
        contrast_scale: Range::fixed(1.0),
    };

    /// HSV jitter used for detection training.
    pub fn detection_default() -> Self {
        Self {
            hue_delta: Range::new(-5.4, 5.4),
            saturation_scale: Range::new(0.3, 1.7),
            value_scale: Range::new(0.6, 1.4),
            ..Self::IDENTITY
        }
    }

    /// Brightness, contrast, saturation and hue jitter for crops.
    pub fn classification_default() -> Self {
        Self {
            hue_delta: Range::new(-9.0, 9.0),
            saturation_scale: Range::new(0.8, 1.2),
            value_scale: Range::fixed(1.0),
            brightness_delta: Range::new(-0.1, 0.1),
            contrast_scale: Range::new(0.8, 1.2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hue_delta.validate("hue_delta")?;
        self.saturation_scale.validate("saturation_scale")?;
        self.value_scale.validate("value_scale")?;
        self.brightness_delta.validate("brightness_delta")?;
        self.contrast_scale.validate("contrast_scale")?;
        if self.saturation_scale.min < 0.0 || self.value_scale.min < 0.0 || self.contrast_scale.min < 0.0 {
            return Err(Error::Invalid("photometric scales must be non-negative".into()));
        }
        Ok(())
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Color jitter with parameters drawn once per image from `cfg`.
pub fn photometric(image: &Raster, cfg: &PhotometricConfig, seed: u64) -> Result<Raster> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hue = cfg.hue_delta.sample(&mut rng);
    let sat = cfg.saturation_scale.sample(&mut rng);
    let val = cfg.value_scale.sample(&mut rng);
    let bright = cfg.brightness_delta.sample(&mut rng) * 255.0;
    let contrast = cfg.contrast_scale.sample(&mut rng);
    let color = image.channels() == 3 && (hue != 0.0 || sat != 1.0);
    if !color && val == 1.0 && bright == 0.0 && contrast == 1.0 {
        return Ok(image.clone());
    }
    let c = image.channels() as usize;
    let mut px: Vec<f64> = Vec::with_capacity(image.data().len());
    for p in image.data().chunks(c) {
        if c == 3 {
            let (h, s, v) = rgb_to_hsv(p[0] as f64, p[1] as f64, p[2] as f64);
            let (r, g, b) = hsv_to_rgb(h + hue, (s * sat).min(1.0), (v * val).min(255.0));
            px.extend([r, g, b]);
        } else {
            px.extend(p.iter().map(|&v| (v as f64 * val).min(255.0)));
        }
    }
    if bright != 0.0 || contrast != 1.0 {
        let mean = px.iter().sum::<f64>() / px.len().max(1) as f64;
        for v in &mut px {
            *v = ((*v - mean) * contrast + mean + bright).clamp(0.0, 255.0);
        }
    }
    Raster::from_raw(image.width(), image.height(), image.channels(), px.into_iter().map(to_u8).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricParams {
    /// Translation in pixels after scaling.
    pub shift_x: f64,
    pub shift_y: f64,
    /// Uniform scale about the image center.
    pub scale: f64,
    pub flip_lr: bool,
}

impl GeometricParams {
    pub const IDENTITY: Self = Self {
        shift_x: 0.0,
        shift_y: 0.0,
        scale: 1.0,
        flip_lr: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricConfig {
    /// Largest shift as a fraction of the image side.
    pub shift_frac: f64,
    pub scale: Range,
    pub flip_lr_prob: f64,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        Self {
            shift_frac: 0.1,
            scale: Range::new(0.5, 1.5),
            flip_lr_prob: 0.5,
        }
    }
}

impl GeometricConfig {
    pub fn sample(&self, width: u32, height: u32, seed: u64) -> Result<GeometricParams> {
        self.scale.validate("scale")?;
        if !(self.scale.min > 0.0) || !(0.0..=1.0).contains(&self.flip_lr_prob) || !(self.shift_frac >= 0.0) {
            return Err(Error::Invalid("bad geometric augmentation config".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = Range::new(-self.shift_frac, self.shift_frac);
        Ok(GeometricParams {
            shift_x: (shift.sample(&mut rng) * width as f64).round(),
            shift_y: (shift.sample(&mut rng) * height as f64).round(),
            scale: self.scale.sample(&mut rng),
            flip_lr: rng.random_bool(self.flip_lr_prob),
        })
    }
}

/// Scales about the center, shifts, then optionally mirrors left-right.
/// Output keeps the input size; uncovered pixels are 0.
pub fn geometric(sample: &Sample, p: &GeometricParams) -> Result<Sample> {
    if !(p.scale > 0.0) || !p.shift_x.is_finite() || !p.shift_y.is_finite() {
        return Err(Error::Invalid(format!("bad geometric params {p:?}")));
    }
    let (w, h) = sample.image.dims();
    let tx = (1.0 - p.scale) * w as f64 / 2.0 + p.shift_x;
    let ty = (1.0 - p.scale) * h as f64 / 2.0 + p.shift_y;
    let xs = AxisMap::affine_area(w, w, p.scale, tx);
    let ys = AxisMap::affine_area(h, h, p.scale, ty);
    let mut image = sample.image.resample(&xs, &ys, 0);
    let bounds = image.bounds();
    let mut boxes = Vec::new();
    for b in &sample.boxes {
        if let Some(mut bb) = map_box(&b.bbox, p.scale, tx, ty, &bounds, 0.0) {
            if p.flip_lr {
                bb = flip_box_lr(&bb, w);
            }
            boxes.push(LabeledBox { bbox: bb, label: b.label.clone() });
        }
    }
    if p.flip_lr {
        image = image.flip_horizontal();
    }
    Ok(Sample { image, boxes })
}

/// `x -> width - x` applied to a half-open box.
pub fn flip_box_lr(b: &BBox, width: u32) -> BBox {
    let w = width as i64;
    BBox {
        x_min: w - b.x_max,
        y_min: b.y_min,
        x_max: w - b.x_min,
        y_max: b.y_max,
    }
}

/// Crop augmentation that never changes what genus a crop shows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAugmentConfig {
    pub vertical_flip: bool,
    /// Off by default: it lowered macro F1 in the reference experiments.
    pub horizontal_flip: bool,
    /// Off by default for the same reason.
    pub gaussian_noise: bool,
    pub noise_sd: f64,
    pub photometric: Option<PhotometricConfig>,
}

impl Default for ClassAugmentConfig {
    fn default() -> Self {
        Self {
            vertical_flip: true,
            horizontal_flip: false,
            gaussian_noise: false,
            noise_sd: 4.0,
            photometric: Some(PhotometricConfig::classification_default()),
        }
    }
}

/// Applies each enabled transform; flips fire with probability 1/2.
pub fn class_preserving(image: &Raster, cfg: &ClassAugmentConfig, seed: u64) -> Result<Raster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    if cfg.vertical_flip && rng.random_bool(0.5) {
        out = out.flip_vertical();
    }
    if cfg.horizontal_flip && rng.random_bool(0.5) {
        out = out.flip_horizontal();
    }
    if let Some(p) = &cfg.photometric {
        out = photometric(&out, p, rng.random())?;
    }
    if cfg.gaussian_noise && cfg.noise_sd > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sd)
            .map_err(|e| Error::Invalid(format!("noise sd: {e}")))?;
        for v in out.data_mut() {
            *v = to_u8(*v as f64 + normal.sample(&mut rng));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosaicSection {
    pub enabled: bool,
    pub canvas: u32,
    pub center_jitter: u32,
    pub min_keep: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Toggle<T> {
    pub enabled: bool,
    #[serde(flatten)]
    pub params: T,
}

/// Augmentation config file: an explicit switch and ranges per transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub mosaic: MosaicSection,
    pub hsv: Toggle<PhotometricConfig>,
    pub geometric: Toggle<GeometricConfig>,
    pub classification: ClassAugmentConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mosaic: MosaicSection {
                enabled: true,
                canvas: 1280,
                center_jitter: 320,
                min_keep: DEFAULT_MIN_KEEP,
            },
            hsv: Toggle {
                enabled: true,
                params: PhotometricConfig::detection_default(),
            },
            geometric: Toggle {
                enabled: true,
                params: GeometricConfig::default(),
            },
            classification: ClassAugmentConfig::default(),
        }
    }
}

impl AugmentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Detection pipeline for one training image: mosaic (when four samples
    /// are given and it is enabled), then HSV jitter, then shift/scale/flip.
    pub fn detection_sample(&self, samples: &[Sample], seed: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = if self.mosaic.enabled && samples.len() >= 4 {
            let cfg = MosaicConfig {
                canvas: self.mosaic.canvas,
                center_jitter: self.mosaic.center_jitter,
                seed: rng.random(),
                min_keep: self.mosaic.min_keep,
            };
            mosaic(samples, &cfg)?
        } else {
            samples
                .first()
                .cloned()
                .ok_or_else(|| Error::Invalid("no samples to augment".into()))?
        };
        if self.hsv.enabled {
            s.image = photometric(&s.image, &self.hsv.params, rng.random())?;
        }
        if self.geometric.enabled {
            let (w, h) = s.image.dims();
            let p = self.geometric.params.sample(w, h, rng.random())?;
            s = geometric(&s, &p)?;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: u32, h: u32, seed: u32) -> Raster {
        Raster::from_fn(w, h, 3, |x, y, c| ((x * 3 + y * 5 + c as u32 * 11 + seed * 17) % 251) as u8)
    }

    fn sample(w: u32, h: u32, seed: u32, boxes: &[BBox]) -> Sample {
        Sample {
            image: pattern(w, h, seed),
            boxes: boxes.iter().map(|b| LabeledBox::new(*b, Some("Fagus"))).collect(),
        }
    }

    #[test]
    fn zero_jitter_mosaic_is_exact() {
        let b = BBox::from_xywh(10, 20, 30, 40);
        let samples: Vec<Sample> = (0..4).map(|k| sample(640, 640, k, &[b])).collect();
        let out = mosaic(&samples, &MosaicConfig::new(1280, 0, 7)).unwrap();
        for (k, (ox, oy)) in [(0, 0), (640, 0), (0, 640), (640, 640)].into_iter().enumerate() {
            let q = out.image.crop(&BBox::from_xywh(ox, oy, 640, 640)).unwrap();
            assert_eq!(q, samples[k].image);
            assert_eq!(out.boxes[k].bbox, b.translate(ox, oy));
            assert_eq!(out.boxes[k].label.as_deref(), Some("Fagus"));
        }
    }

    #[test]
    fn mosaic_rejects_too_few_samples_and_bad_jitter() {
        let s = sample(8, 8, 0, &[]);
        assert!(mosaic(&[s.clone(), s.clone(), s.clone()], &MosaicConfig::new(16, 0, 0)).is_err());
        assert!(mosaic(&[s.clone(), s.clone(), s.clone(), s], &MosaicConfig::new(16, 8, 0)).is_err());
    }

    #[test]
    fn straddling_box_is_clipped_to_its_quadrant() {
        // source 0 lands in the top-left quadrant with its bottom-right corner
        // on the junction; a box hanging over its right edge is cut there
        let b = BBox::from_xywh(600, 100, 80, 20);
        let samples: Vec<Sample> = (0..4).map(|k| sample(640, 640, k, if k == 0 { std::slice::from_ref(&b) } else { &[] })).collect();
        let layout = mosaic_layout([(640, 640); 4], &MosaicConfig::new(1280, 0, 1)).unwrap();
        assert_eq!(layout[0].scale, 1.0);
        let out = mosaic(&samples, &MosaicConfig::new(1280, 0, 1)).unwrap();
        assert_eq!(out.boxes.len(), 1);
        assert_eq!(out.boxes[0].bbox, BBox::new(600, 100, 640, 120).unwrap());
    }

    #[test]
    fn photometric_examples() {
        let img = pattern(20, 10, 3);
        assert_eq!(photometric(&img, &PhotometricConfig::IDENTITY, 1).unwrap(), img);
        let gray = Raster::filled(4, 4, 3, 100);
        let twice = PhotometricConfig { value_scale: Range::fixed(2.0), ..PhotometricConfig::IDENTITY };
        assert_eq!(photometric(&gray, &twice, 0).unwrap(), Raster::filled(4, 4, 3, 200));
        let desat = PhotometricConfig { saturation_scale: Range::fixed(0.0), ..PhotometricConfig::IDENTITY };
        let out = photometric(&img, &desat, 0).unwrap();
        assert!(out.data().chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
        let cfg = PhotometricConfig::detection_default();
        assert_eq!(photometric(&img, &cfg, 42).unwrap(), photometric(&img, &cfg, 42).unwrap());
        assert_eq!(photometric(&img, &cfg, 42).unwrap().dims(), img.dims());
    }

    #[test]
    fn hsv_round_trip() {
        for (r, g, b) in [(255.0, 0.0, 0.0), (12.0, 200.0, 99.0), (40.0, 40.0, 41.0)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-9 && (g - g2).abs() < 1e-9 && (b - b2).abs() < 1e-9);
        }
    }

    #[test]
    fn geometric_examples() {
        let s = sample(200, 100, 1, &[BBox::from_xywh(20, 30, 40, 20)]);
        assert_eq!(geometric(&s, &GeometricParams::IDENTITY).unwrap(), s);
        let flip = GeometricParams { flip_lr: true, ..GeometricParams::IDENTITY };
        let once = geometric(&s, &flip).unwrap();
        assert_eq!(once.boxes[0].bbox, BBox::from_xywh(140, 30, 40, 20));
        assert_eq!(geometric(&once, &flip).unwrap(), s);
        let half = GeometricParams { scale: 0.5, ..GeometricParams::IDENTITY };
        let small = geometric(&s, &half).unwrap();
        let bb = small.boxes[0].bbox;
        assert!((bb.width() - 20).abs() <= 1 && (bb.height() - 10).abs() <= 1);
        assert!(geometric(&s, &GeometricParams { scale: 0.0, ..GeometricParams::IDENTITY }).is_err());
    }

    #[test]
    fn class_preserving_defaults() {
        let cfg = ClassAugmentConfig::default();
        assert!(cfg.vertical_flip && !cfg.horizontal_flip && !cfg.gaussian_noise);
        let img = pattern(16, 12, 2);
        let a = class_preserving(&img, &cfg, 5).unwrap();
        assert_eq!(a, class_preserving(&img, &cfg, 5).unwrap());
        assert_eq!(a.dims(), img.dims());
    }

    #[test]
    fn config_file_round_trip() {
        let cfg = AugmentConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<AugmentConfig>(&json).unwrap(), cfg);
    }
}
