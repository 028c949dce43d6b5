//! Deterministic synthetic macerate slides with exact ground truth.
//!
//! Vessel elements are rotated super-ellipses filled with a periodic dot
//! pattern standing in for pits; fibers are long thin unannotated
//! distractors. A [`Scene`] renders any rectangle of any focal plane on
//! demand, so slides far larger than memory can be streamed into a
//! [`SlideContainer`].

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::DEFAULT_GENERA;
use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::raster::Raster;
use crate::scalar::to_u8;
use crate::slide_store::{PlaneSource, SlideContainer};
use crate::types::{Annotation, BBox, SlideMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGenusProfile {
    pub genus: String,
    /// Major-axis length in level-0 pixels.
    pub length_px: MeanSd,
    pub aspect: MeanSd,
    /// Pit dots per pixel along each element axis.
    pub pit_texture_freq: f64,
    pub base_tint: [u8; 3],
}

impl SynthGenusProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = self.length_px.mean > 0.0
            && self.length_px.sd >= 0.0
            && self.aspect.mean >= 1.0
            && self.aspect.sd >= 0.0
            && self.pit_texture_freq > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad synthetic profile for `{}`", self.genus)))
        }
    }

    /// Same shapes at a different magnification.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            genus: self.genus.clone(),
            length_px: MeanSd {
                mean: self.length_px.mean * factor,
                sd: self.length_px.sd * factor,
            },
            aspect: self.aspect,
            pit_texture_freq: self.pit_texture_freq / factor,
            base_tint: self.base_tint,
        }
    }
}

/// Full-resolution profiles for the default catalog. Hevea's mean length
/// follows the published size cue; the others are free parameters chosen so
/// that every genus differs in length, texture and tint.
pub fn default_profiles() -> Vec<SynthGenusProfile> {
    // genus, length, aspect, pit freq, tint
    let table: [(f64, f64, f64, [u8; 3]); 9] = [
        (700.0, 3.0, 0.012, [150, 120, 170]),  // Acacia
        (900.0, 3.6, 0.016, [110, 80, 140]),   // Betula
        (500.0, 2.6, 0.020, [90, 60, 120]),    // Eucalyptus
        (600.0, 3.2, 0.014, [170, 140, 190]),  // Fagus
        (1400.0, 4.4, 0.010, [130, 100, 160]), // Hevea
        (1200.0, 4.0, 0.018, [70, 45, 100]),   // Liquidambar
        (800.0, 3.4, 0.013, [160, 130, 180]),  // Populus
        (750.0, 2.8, 0.017, [120, 90, 150]),   // Salix
        (1000.0, 3.8, 0.015, [100, 70, 130]),  // Schima
    ];
    DEFAULT_GENERA
        .iter()
        .zip(table)
        .map(|(g, (len, aspect, freq, tint))| SynthGenusProfile {
            genus: g.to_string(),
            length_px: MeanSd { mean: len, sd: 0.04 * len },
            aspect: MeanSd { mean: aspect, sd: 0.12 },
            pit_texture_freq: freq,
            base_tint: tint,
        })
        .collect()
}

/// Profiles at one tenth of full resolution, for desk-scale runs.
pub fn desk_profiles() -> Vec<SynthGenusProfile> {
    default_profiles().iter().map(|p| p.scaled(0.1)).collect()
}

pub const BACKGROUND: u8 = 235;
const FIBER_TINT: [u8; 3] = [196, 188, 200];
const DOT_SHADE: f64 = 0.6;
const SUPER_EXP: f64 = 2.5;

fn default_planes() -> u32 {
    5
}
fn default_one() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    0.1
}
fn default_blur() -> Vec<f64> {
    vec![2.0, 1.0, 0.0, 1.0, 2.0]
}
fn default_noise() -> f64 {
    2.0
}
fn default_iou_cap() -> f64 {
    0.3
}
fn default_channels() -> u8 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub slide_id: String,
    pub maceration_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_planes")]
    pub planes: u32,
    pub genus_mix: BTreeMap<String, f64>,
    pub element_count: usize,
    #[serde(default)]
    pub fiber_count: usize,
    /// Multiplies every pixel before noise.
    #[serde(default = "default_one")]
    pub brightness: f64,
    /// Per-element relative tint variation.
    #[serde(default = "default_jitter")]
    pub stain_jitter: f64,
    /// Gaussian sigma per plane; 0 keeps the plane sharp.
    #[serde(default = "default_blur")]
    pub blur_per_plane: Vec<f64>,
    /// Standard deviation of independent per-plane pixel noise.
    #[serde(default = "default_noise")]
    pub plane_noise: f64,
    pub seed: u64,
    /// Placement cap on pairwise box IOU; ignored when `clustered`.
    #[serde(default = "default_iou_cap")]
    pub max_pair_iou: f64,
    /// When positive, element boxes grown by this many pixels must not meet.
    #[serde(default)]
    pub min_separation_px: u32,
    /// Draw elements around a few cluster centers without an overlap cap.
    #[serde(default)]
    pub clustered: bool,
    #[serde(default = "default_channels")]
    pub channels: u8,
}

impl SynthSpec {
    pub fn new(slide_id: &str, maceration_id: &str, width: u32, height: u32, seed: u64) -> Self {
        Self {
            slide_id: slide_id.into(),
            maceration_id: maceration_id.into(),
            width,
            height,
            planes: default_planes(),
            genus_mix: BTreeMap::new(),
            element_count: 0,
            fiber_count: 0,
            brightness: 1.0,
            stain_jitter: default_jitter(),
            blur_per_plane: default_blur(),
            plane_noise: default_noise(),
            seed,
            max_pair_iou: default_iou_cap(),
            min_separation_px: 0,
            clustered: false,
            channels: default_channels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.planes == 0 {
            return Err(Error::Invalid("synthetic slide needs positive size and planes".into()));
        }
        if self.blur_per_plane.len() != self.planes as usize {
            return Err(Error::LengthMismatch {
                expected: self.planes as usize,
                actual: self.blur_per_plane.len(),
            });
        }
        if let Some(r) = self.blur_per_plane.iter().find(|r| !(**r >= 0.0)) {
            return Err(Error::OutOfRange(format!("blur radius {r}")));
        }
        if !(0.0..=1.0).contains(&self.brightness) || !(0.0..=1.0).contains(&self.stain_jitter) {
            return Err(Error::OutOfRange("brightness and stain_jitter must be in [0, 1]".into()));
        }
        if !(self.plane_noise >= 0.0) {
            return Err(Error::OutOfRange("plane_noise must be non-negative".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Invalid(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.element_count > 0 {
            let total: f64 = self.genus_mix.values().sum();
            if (total - 1.0).abs() > 1e-9 || self.genus_mix.values().any(|f| *f < 0.0) {
                return Err(Error::Invalid(format!("genus fractions sum to {total}, not 1")));
            }
        }
        Ok(())
    }

    pub fn slide_meta(&self) -> SlideMeta {
        let genus = match self.genus_mix.len() {
            1 => self.genus_mix.keys().next().cloned(),
            _ => None,
        };
        SlideMeta::new(
            &self.slide_id,
            &self.maceration_id,
            genus,
            self.width as u64,
            self.height as u64,
        )
        .with_planes(self.planes)
    }
}

/// Declarative generator config: a spec plus optional profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(flatten)]
    pub spec: SynthSpec,
    /// Defaults to [`default_profiles`] scaled by `profile_scale`.
    #[serde(default)]
    pub profiles: Option<Vec<SynthGenusProfile>>,
    #[serde(default = "default_one")]
    pub profile_scale: f64,
}

impl SynthConfig {
    pub fn resolved_profiles(&self) -> Vec<SynthGenusProfile> {
        let base = self.profiles.clone().unwrap_or_else(default_profiles);
        if self.profile_scale == 1.0 {
            base
        } else {
            base.iter().map(|p| p.scaled(self.profile_scale)).collect()
        }
    }
}

/// Integer counts proportional to `fractions` that sum to exactly `total`;
/// leftover units go to the largest remainders, ties to the earlier entry.
pub fn largest_remainder(fractions: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone)]
struct Shape {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    a: f64,
    b: f64,
    tint: [f64; 3],
    /// Dot period in pixels and phases; `None` for fibers.
    dots: Option<(f64, f64, f64)>,
    bbox: BBox,
}

impl Shape {
    fn local(&self, x: i64, y: i64) -> (f64, f64) {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        (dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos)
    }

    fn contains(&self, x: i64, y: i64) -> bool {
        let (u, v) = self.local(x, y);
        (u / self.a).abs().powf(SUPER_EXP) + (v / self.b).abs().powf(SUPER_EXP) <= 1.0
    }

    fn shade(&self, x: i64, y: i64) -> f64 {
        let Some((period, pu, pv)) = self.dots else {
            return 1.0;
        };
        let (u, v) = self.local(x, y);
        let fu = u / period + pu;
        let fv = v / period + pv;
        let du = fu - fu.floor() - 0.5;
        let dv = fv - fv.floor() - 0.5;
        if du * du + dv * dv < 0.09 {
            DOT_SHADE
        } else {
            1.0
        }
    }

    /// Tight box of the rasterized mask, or `None` if no pixel center is
    /// inside.
    fn tight_bbox(&self) -> Option<BBox> {
        let r = self.a.max(self.b) * 1.5 + 2.0;
        let (x0, x1) = ((self.cx - r).floor() as i64, (self.cx + r).ceil() as i64);
        let (y0, y1) = ((self.cy - r).floor() as i64, (self.cy + r).ceil() as i64);
        let mut bb: Option<BBox> = None;
        for y in y0..y1 {
            let mut row_min = None;
            let mut row_max = None;
            for x in x0..x1 {
                if self.contains(x, y) {
                    row_min.get_or_insert(x);
                    row_max = Some(x);
                }
            }
            if let (Some(a), Some(b)) = (row_min, row_max) {
                let cell = BBox::from_xywh(a, y, b - a + 1, 1);
                bb = Some(match bb {
                    None => cell,
                    Some(o) => BBox {
                        x_min: o.x_min.min(cell.x_min),
                        y_min: o.y_min,
                        x_max: o.x_max.max(cell.x_max),
                        y_max: cell.y_max,
                    },
                });
            }
        }
        bb
    }
}

fn luma(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Zero-mean, unit-variance noise sample keyed by position.
fn noise_at(seed: u64, plane: u32, x: i64, y: i64, c: u8) -> f64 {
    let key = splitmix(seed ^ splitmix(((plane as u64) << 56) ^ ((c as u64) << 48) ^ (y as u64) << 24 ^ x as u64));
    let u1 = (key >> 32) as f64 / 4_294_967_296.0;
    let u2 = (key & 0xFFFF_FFFF) as f64 / 4_294_967_296.0;
    (u1 + u2 - 1.0) * 6f64.sqrt()
}

/// Normalized Gaussian taps for offsets `-half..=half`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable blur of a float buffer covering `src` (image bounds `img`),
/// producing the pixels of `dst`. Coordinates clamp at image edges.
fn blur_region(buf: &[f64], src: &BBox, img: &BBox, dst: &BBox, c: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let half = (k.len() / 2) as i64;
    let sw = src.width() as usize;
    let (dw, dh) = (dst.width() as usize, dst.height() as usize);
    let clamp_x = |x: i64| x.clamp(img.x_min, img.x_max - 1) - src.x_min;
    let clamp_y = |y: i64| y.clamp(img.y_min, img.y_max - 1) - src.y_min;
    // horizontal: rows of src, columns of dst
    let mut tmp = vec![0f64; src.height() as usize * dw * c];
    for sy in 0..src.height() as usize {
        for dx in 0..dw {
            let x = dst.x_min + dx as i64;
            for (ki, w) in k.iter().enumerate() {
                let sx = clamp_x(x + ki as i64 - half) as usize;
                for ch in 0..c {
                    tmp[(sy * dw + dx) * c + ch] += w * buf[(sy * sw + sx) * c + ch];
                }
            }
        }
    }
    let mut out = vec![0f64; dw * dh * c];
    for dy in 0..dh {
        let y = dst.y_min + dy as i64;
        for (ki, w) in k.iter().enumerate() {
            let sy = clamp_y(y + ki as i64 - half) as usize;
            for dx in 0..dw {
                for ch in 0..c {
                    out[(dy * dw + dx) * c + ch] += w * tmp[(sy * dw + dx) * c + ch];
                }
            }
        }
    }
    out
}

/// Blurs `base` once per radius. Radius 0 returns `base` unchanged.
pub fn plane_degrade(base: &Raster, radii: &[f64]) -> Result<Vec<Raster>> {
    if let Some(r) = radii.iter().find(|r| !(**r >= 0.0)) {
        return Err(Error::OutOfRange(format!("blur radius {r}")));
    }
    let c = base.channels() as usize;
    let (w, h) = base.dims();
    let all = base.bounds();
    let buf: Vec<f64> = base.data().iter().map(|&v| v as f64).collect();
    radii
        .iter()
        .map(|&r| {
            if r == 0.0 {
                return Ok(base.clone());
            }
            let out = blur_region(&buf, &all, &all, &all, c, r);
            Raster::from_raw(w, h, base.channels(), out.into_iter().map(to_u8).collect())
        })
        .collect()
}

/// A generated slide: shapes plus rendering parameters.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SynthSpec,
    fibers: Vec<Shape>,
    elements: Vec<Shape>,
    ground_truth: Vec<Annotation>,
}

impl Scene {
    pub fn new(spec: &SynthSpec, profiles: &[SynthGenusProfile]) -> Result<Self> {
        spec.validate()?;
        let mut mix: Vec<(&SynthGenusProfile, f64)> = Vec::new();
        for (genus, &frac) in &spec.genus_mix {
            let p = profiles
                .iter()
                .find(|p| &p.genus == genus)
                .ok_or_else(|| Error::UnknownGenus(format!("{genus} (no synthetic profile)")))?;
            p.validate()?;
            mix.push((p, frac));
        }
        let counts = largest_remainder(&mix.iter().map(|m| m.1).collect::<Vec<_>>(), spec.element_count);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut order: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(i, n))
            .collect();
        order.shuffle(&mut rng);

        let bounds = BBox::from_xywh(0, 0, spec.width as i64, spec.height as i64);
        let clusters: Vec<(f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.2..0.8) * spec.width as f64,
                    rng.random_range(0.2..0.8) * spec.height as f64,
                )
            })
            .collect();
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let sep = spec.min_separation_px as i64;
        let grow = |b: &BBox| BBox {
            x_min: b.x_min - sep,
            y_min: b.y_min - sep,
            x_max: b.x_max + sep,
            y_max: b.y_max + sep,
        };

        let mut elements: Vec<Shape> = Vec::new();
        let mut ground_truth = Vec::new();
        for (k, &gi) in order.iter().enumerate() {
            let (p, _) = mix[gi];
            let mut placed = None;
            for _ in 0..2000 {
                let length = (p.length_px.mean + p.length_px.sd * unit.sample(&mut rng)).max(4.0);
                let aspect = (p.aspect.mean + p.aspect.sd * unit.sample(&mut rng)).max(1.2);
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let (cx, cy) = if spec.clustered {
                    let (ox, oy) = clusters[rng.random_range(0..clusters.len())];
                    let spread = p.length_px.mean;
                    (ox + spread * unit.sample(&mut rng), oy + spread * unit.sample(&mut rng))
                } else {
                    (
                        rng.random_range(0.0..spec.width as f64),
                        rng.random_range(0.0..spec.height as f64),
                    )
                };
                let jitter = 1.0 + spec.stain_jitter * rng.random_range(-0.15..0.15);
                let tint = p.base_tint.map(|t| (t as f64 * jitter).min(255.0));
                let period = 1.0 / p.pit_texture_freq;
                let phases = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                let mut shape = Shape {
                    cx,
                    cy,
                    cos: theta.cos(),
                    sin: theta.sin(),
                    a: length / 2.0,
                    b: length / 2.0 / aspect,
                    tint,
                    dots: Some((period, phases.0, phases.1)),
                    bbox: BBox::from_xywh(0, 0, 1, 1),
                };
                let Some(bb) = shape.tight_bbox() else { continue };
                if !bounds.contains(&bb) {
                    continue;
                }
                let conflict = !spec.clustered
                    && elements.iter().any(|e| {
                        iou::<f64>(&e.bbox, &bb) > spec.max_pair_iou
                            || (sep > 0 && grow(&e.bbox).intersection(&bb).is_some())
                    });
                if conflict {
                    continue;
                }
                shape.bbox = bb;
                placed = Some(shape);
                break;
            }
            let shape = placed.ok_or_else(|| {
                Error::Invalid(format!(
                    "could not place element {k} of {} on a {}x{} slide",
                    spec.element_count, spec.width, spec.height
                ))
            })?;
            ground_truth.push(Annotation::human(
                format!("{}-gt-{k:05}", spec.slide_id),
                &spec.slide_id,
                shape.bbox,
                Some(p.genus.clone()),
            ));
            elements.push(shape);
        }

        let mean_len = if mix.is_empty() {
            profiles.iter().map(|p| p.length_px.mean).sum::<f64>() / profiles.len().max(1) as f64
        } else {
            mix.iter().map(|(p, f)| p.length_px.mean * f).sum()
        };
        let mut fibers = Vec::new();
        for k in 0..spec.fiber_count {
            let mut placed = None;
            for _ in 0..2000 {
                let length = mean_len * rng.random_range(0.8..1.2);
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let mut shape = Shape {
                    cx: rng.random_range(0.0..spec.width as f64),
                    cy: rng.random_range(0.0..spec.height as f64),
                    cos: theta.cos(),
                    sin: theta.sin(),
                    a: length / 2.0,
                    b: (length / 2.0 / 18.0).max(1.0),
                    tint: FIBER_TINT.map(f64::from),
                    dots: None,
                    bbox: BBox::from_xywh(0, 0, 1, 1),
                };
                let Some(bb) = shape.tight_bbox() else { continue };
                let clear = elements.iter().all(|e| grow(&e.bbox).intersection(&bb).is_none());
                if bounds.contains(&bb) && clear {
                    shape.bbox = bb;
                    placed = Some(shape);
                    break;
                }
            }
            fibers.push(placed.ok_or_else(|| Error::Invalid(format!("could not place fiber {k}")))?);
        }

        Ok(Self {
            spec: spec.clone(),
            fibers,
            elements,
            ground_truth,
        })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    /// Annotations for every element, in placement order.
    pub fn ground_truth(&self) -> &[Annotation] {
        &self.ground_truth
    }

    pub fn fiber_boxes(&self) -> Vec<BBox> {
        self.fibers.iter().map(|f| f.bbox).collect()
    }

    fn color(&self, rgb: [f64; 3]) -> [f64; 3] {
        let b = self.spec.brightness;
        if self.spec.channels == 1 {
            [luma(rgb) * b; 3]
        } else {
            rgb.map(|v| v * b)
        }
    }

    /// Noise-free, unblurred pixels of `rect` as floats.
    fn render_base(&self, rect: &BBox) -> Vec<f64> {
        let c = self.spec.channels as usize;
        let (w, h) = (rect.width() as usize, rect.height() as usize);
        let bg = self.color([BACKGROUND as f64; 3]);
        let mut buf = Vec::with_capacity(w * h * c);
        for _ in 0..w * h {
            buf.extend_from_slice(&bg[..c]);
        }
        for s in self.fibers.iter().chain(&self.elements) {
            let Some(part) = s.bbox.intersection(rect) else { continue };
            let tint = self.color(s.tint);
            for y in part.y_min..part.y_max {
                for x in part.x_min..part.x_max {
                    if !s.contains(x, y) {
                        continue;
                    }
                    let shade = s.shade(x, y);
                    let o = ((y - rect.y_min) as usize * w + (x - rect.x_min) as usize) * c;
                    for ch in 0..c {
                        buf[o + ch] = tint[ch] * shade;
                    }
                }
            }
        }
        buf
    }

    /// Blurred pixels of `rect`. Only neighbourhoods of shapes are
    /// convolved; elsewhere every window holds background alone, so the
    /// background's blurred value (same arithmetic) is filled in.
    fn render_blurred(&self, rect: &BBox, img: &BBox, sigma: f64) -> Vec<f64> {
        let c = self.spec.channels as usize;
        let half = (3.0 * sigma).ceil() as i64;
        let grow = |b: &BBox, by: i64| BBox {
            x_min: b.x_min - by,
            y_min: b.y_min - by,
            x_max: b.x_max + by,
            y_max: b.y_max + by,
        };
        let bg = self.color([BACKGROUND as f64; 3]);
        let patch = BBox::from_xywh(0, 0, 2 * half + 1, 2 * half + 1);
        let flat: Vec<f64> = (0..patch.area()).flat_map(|_| bg[..c].to_vec()).collect();
        let centre = BBox::from_xywh(half, half, 1, 1);
        let bg_blur = blur_region(&flat, &patch, &patch, &centre, c, sigma);

        let (w, h) = (rect.width() as usize, rect.height() as usize);
        let mut out = Vec::with_capacity(w * h * c);
        for _ in 0..w * h {
            out.extend_from_slice(&bg_blur);
        }
        for s in self.fibers.iter().chain(&self.elements) {
            let Some(dirty) = grow(&s.bbox, half).intersection(rect) else { continue };
            let ext = grow(&dirty, half).clip(img).expect("dirty inside image");
            let base = self.render_base(&ext);
            let part = blur_region(&base, &ext, img, &dirty, c, sigma);
            let dw = dirty.width() as usize;
            for (row, chunk) in part.chunks(dw * c).enumerate() {
                let y = (dirty.y_min - rect.y_min) as usize + row;
                let x = (dirty.x_min - rect.x_min) as usize;
                let o = (y * w + x) * c;
                out[o..o + dw * c].copy_from_slice(chunk);
            }
        }
        out
    }

    /// One plane rendered into a raster, for `rect` inside the slide.
    pub fn render(&self, plane: u32, rect: &BBox) -> Result<Raster> {
        let img = BBox::from_xywh(0, 0, self.spec.width as i64, self.spec.height as i64);
        if plane >= self.spec.planes {
            return Err(Error::OutOfRange(format!("plane {plane} of {}", self.spec.planes)));
        }
        if !img.contains(rect) || rect.area() == 0 {
            return Err(Error::OutOfRange(format!("region {rect} outside the slide")));
        }
        let c = self.spec.channels as usize;
        let sigma = self.spec.blur_per_plane[plane as usize];
        let mut px = if sigma == 0.0 {
            self.render_base(rect)
        } else {
            self.render_blurred(rect, &img, sigma)
        };
        if self.spec.plane_noise > 0.0 {
            let w = rect.width() as usize;
            for (i, v) in px.iter_mut().enumerate() {
                let (p, ch) = (i / c, (i % c) as u8);
                let (x, y) = (rect.x_min + (p % w) as i64, rect.y_min + (p / w) as i64);
                *v += self.spec.plane_noise * noise_at(self.spec.seed, plane, x, y, ch);
            }
        }
        Raster::from_raw(
            rect.width() as u32,
            rect.height() as u32,
            self.spec.channels,
            px.into_iter().map(to_u8).collect(),
        )
    }

    /// A whole plane in memory.
    pub fn render_plane(&self, plane: u32) -> Result<Raster> {
        self.render(plane, &BBox::from_xywh(0, 0, self.spec.width as i64, self.spec.height as i64))
    }
}

impl PlaneSource for Scene {
    fn width(&self) -> u32 {
        self.spec.width
    }
    fn height(&self) -> u32 {
        self.spec.height
    }
    fn channels(&self) -> u8 {
        self.spec.channels
    }
    fn plane_count(&self) -> u32 {
        self.spec.planes
    }
    fn read(&self, plane: u32, rect: &BBox) -> Result<Raster> {
        self.render(plane, rect)
    }
}

/// Renders a slide into a container under `root` and returns it with its
/// ground truth.
pub fn generate(
    root: &Path,
    spec: &SynthSpec,
    profiles: &[SynthGenusProfile],
    tile_size: u32,
) -> Result<(SlideContainer, Vec<Annotation>)> {
    let scene = Scene::new(spec, profiles)?;
    let container = SlideContainer::ingest_source(root, &scene, spec.slide_meta(), tile_size)?;
    Ok((container, scene.ground_truth))
}
