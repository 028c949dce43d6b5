//! Classical baseline detector: threshold the inverted gray image, label
//! 8-connected components, keep components within an area window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::types::BBox;

use super::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum ThresholdMode {
    /// Otsu threshold of the inverted image.
    Otsu,
    /// Inverted intensities strictly above this value are foreground.
    Fixed(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineDetectorParams {
    pub threshold: ThresholdMode,
    pub min_area_px: u64,
    pub max_area_px: u64,
}

impl Default for BaselineDetectorParams {
    fn default() -> Self {
        Self {
            threshold: ThresholdMode::Otsu,
            min_area_px: 16,
            max_area_px: u64::MAX,
        }
    }
}

/// Row span `[x_min, x_max]` (inclusive) of a component on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSpan {
    pub y: u32,
    pub x_min: u32,
    pub x_max: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub area: u64,
    pub bbox: BBox,
    /// Outermost pixels per row, ascending `y`.
    pub spans: Vec<RowSpan>,
}

impl Component {
    /// Area divided by the area of the convex hull of the pixel squares.
    pub fn solidity(&self) -> f64 {
        let mut pts: Vec<(i64, i64)> = Vec::with_capacity(self.spans.len() * 4);
        for s in &self.spans {
            let (y, x0, x1) = (s.y as i64, s.x_min as i64, s.x_max as i64 + 1);
            pts.extend([(x0, y), (x0, y + 1), (x1, y), (x1, y + 1)]);
        }
        let hull = convex_hull(pts);
        let twice = shoelace2(&hull);
        if twice <= 0 {
            return 0.0;
        }
        (2.0 * self.area as f64 / twice as f64).clamp(0.0, 1.0)
    }
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; counter-clockwise, no collinear points.
fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn shoelace2(poly: &[(i64, i64)]) -> i64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<i64>()
        .abs()
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Two-pass 8-connected labeling. Returns a label image (0 = background,
/// components numbered from 1 in raster order of their first pixel) and the
/// components in that order.
pub fn label_components(mask: &[bool], width: u32, height: u32) -> (Vec<u32>, Vec<Component>) {
    let (w, h) = (width as usize, height as usize);
    assert_eq!(mask.len(), w * h);
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            if x > 0 && labels[y * w + x - 1] != 0 {
                neighbors[n] = labels[y * w + x - 1];
                n += 1;
            }
            if y > 0 {
                let up = (y - 1) * w;
                if x > 0 && labels[up + x - 1] != 0 {
                    neighbors[n] = labels[up + x - 1];
                    n += 1;
                }
                if labels[up + x] != 0 {
                    neighbors[n] = labels[up + x];
                    n += 1;
                }
                if x + 1 < w && labels[up + x + 1] != 0 {
                    neighbors[n] = labels[up + x + 1];
                    n += 1;
                }
            }
            if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                labels[y * w + x] = l;
                continue;
            }
            let mut root = find(&mut parent, neighbors[0]);
            for &nb in &neighbors[1..n] {
                let r = find(&mut parent, nb);
                if r != root {
                    let (lo, hi) = (root.min(r), root.max(r));
                    parent[hi as usize] = lo;
                    root = lo;
                }
            }
            labels[y * w + x] = root;
        }
    }
    // resolve and renumber in order of first appearance
    let mut remap = vec![0u32; parent.len()];
    let mut comps: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let r = find(&mut parent, l);
            if remap[r as usize] == 0 {
                comps.push(Component {
                    area: 0,
                    bbox: BBox::from_xywh(x as i64, y as i64, 1, 1),
                    spans: Vec::new(),
                });
                remap[r as usize] = comps.len() as u32;
            }
            let id = remap[r as usize];
            labels[y * w + x] = id;
            let c = &mut comps[id as usize - 1];
            c.area += 1;
            c.bbox.x_min = c.bbox.x_min.min(x as i64);
            c.bbox.x_max = c.bbox.x_max.max(x as i64 + 1);
            c.bbox.y_max = c.bbox.y_max.max(y as i64 + 1);
            match c.spans.last_mut() {
                Some(s) if s.y == y as u32 => s.x_max = x as u32,
                _ => c.spans.push(RowSpan {
                    y: y as u32,
                    x_min: x as u32,
                    x_max: x as u32,
                }),
            }
        }
    }
    (labels, comps)
}

/// Threshold maximizing between-class variance; class 0 is `<= t`.
/// Returns 255 for a constant histogram so nothing is foreground.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    if total == 0 || hist.iter().filter(|&&c| c > 0).count() < 2 {
        return 255;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0f64, 0f64);
    let (mut best_t, mut best) = (0u8, -1f64);
    for t in 0..255usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if between > best {
            best = between;
            best_t = t as u8;
        }
    }
    best_t
}

pub fn inverted_histogram(gray: &Raster) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in gray.data() {
        hist[255 - v as usize] += 1;
    }
    hist
}

/// Inverted-intensity threshold the detector would use on `gray`.
pub fn resolve_threshold(gray: &Raster, mode: ThresholdMode) -> u8 {
    match mode {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Otsu => otsu_threshold(&inverted_histogram(gray)),
    }
}

/// Detects dark blobs on a light background. Confidence is component
/// solidity. Output is in raster order of each component's first pixel.
pub fn detect_baseline(gray: &Raster, params: &BaselineDetectorParams) -> Result<Vec<Detection>> {
    if gray.channels() != 1 {
        return Err(Error::Invalid(format!(
            "baseline detector needs one channel, got {}",
            gray.channels()
        )));
    }
    if params.min_area_px > params.max_area_px {
        return Err(Error::Invalid(format!(
            "min_area_px {} exceeds max_area_px {}",
            params.min_area_px, params.max_area_px
        )));
    }
    let t = resolve_threshold(gray, params.threshold);
    let mask: Vec<bool> = gray.data().iter().map(|&v| 255 - v > t).collect();
    let (_, comps) = label_components(&mask, gray.width(), gray.height());
    Ok(comps
        .iter()
        .filter(|c| c.area >= params.min_area_px && c.area <= params.max_area_px)
        .map(|c| Detection {
            bbox: c.bbox,
            confidence: c.solidity(),
        })
        .collect())
}
