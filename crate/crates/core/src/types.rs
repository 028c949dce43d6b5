//! Domain values shared by every stage. All geometry is stored in level-0
//! (full resolution) pixel coordinates; other pyramid levels are derived views.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::GenusCatalog;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_PIXEL_SCALE_UM: f64 = 0.69;
pub const DEFAULT_PLANE_STEP_UM: f64 = 16.33;
pub const DEFAULT_PLANE_COUNT: u32 = 5;

/// Axis-aligned box with half-open extent `[x_min, x_max) × [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BBox {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::Invalid(format!(
                "degenerate box ({x_min} {y_min} {x_max} {y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from origin and size. Panics on non-positive size.
    pub fn from_xywh(x: i64, y: i64, w: i64, h: i64) -> Self {
        assert!(w > 0 && h > 0, "box size must be positive");
        Self {
            x_min: x,
            y_min: y,
            x_max: x + w,
            y_max: y + h,
        }
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn long_side(&self) -> i64 {
        self.width().max(self.height())
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        BBox::new(x_min, y_min, x_max, y_max).ok()
    }

    pub fn intersection_area(&self, other: &BBox) -> i64 {
        self.intersection(other).map_or(0, |b| b.area())
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    pub fn contains_pixel(&self, x: i64, y: i64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn translate(&self, dx: i64, dy: i64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Scales by `factor` about the origin. Minimums are floored and maximums
    /// ceiled so the result contains every pixel the source box touches.
    pub fn scale(&self, factor: f64) -> BBox {
        let x_min = (self.x_min as f64 * factor).floor() as i64;
        let y_min = (self.y_min as f64 * factor).floor() as i64;
        let x_max = ((self.x_max as f64 * factor).ceil() as i64).max(x_min + 1);
        let y_max = ((self.y_max as f64 * factor).ceil() as i64).max(y_min + 1);
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn clip(&self, bounds: &BBox) -> Option<BBox> {
        self.intersection(bounds)
    }
}

impl TryFrom<[i64; 4]> for BBox {
    type Error = Error;
    fn try_from(v: [i64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideMeta {
    pub slide_id: String,
    pub maceration_id: String,
    /// Mono-fraction slides carry exactly one genus.
    #[serde(default)]
    pub genus: Option<String>,
    #[serde(default = "default_pixel_scale")]
    pub pixel_scale_um: f64,
    #[serde(default = "default_plane_step")]
    pub plane_step_um: f64,
    #[serde(default = "default_plane_count")]
    pub plane_count: u32,
    pub width_px: u64,
    pub height_px: u64,
}

fn default_pixel_scale() -> f64 {
    DEFAULT_PIXEL_SCALE_UM
}
fn default_plane_step() -> f64 {
    DEFAULT_PLANE_STEP_UM
}
fn default_plane_count() -> u32 {
    DEFAULT_PLANE_COUNT
}

impl SlideMeta {
    pub fn new(
        slide_id: impl Into<String>,
        maceration_id: impl Into<String>,
        genus: Option<String>,
        width_px: u64,
        height_px: u64,
    ) -> Self {
        Self {
            slide_id: slide_id.into(),
            maceration_id: maceration_id.into(),
            genus,
            pixel_scale_um: DEFAULT_PIXEL_SCALE_UM,
            plane_step_um: DEFAULT_PLANE_STEP_UM,
            plane_count: DEFAULT_PLANE_COUNT,
            width_px,
            height_px,
        }
    }

    pub fn with_planes(mut self, plane_count: u32) -> Self {
        self.plane_count = plane_count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.slide_id.is_empty() || self.slide_id.contains(['/', '\\', ',']) {
            return Err(Error::Invalid(format!("bad slide id `{}`", self.slide_id)));
        }
        if self.maceration_id.is_empty() {
            return Err(Error::Invalid(format!(
                "slide `{}` has no maceration id",
                self.slide_id
            )));
        }
        if self.plane_count < 1 {
            return Err(Error::Invalid("plane_count must be at least 1".into()));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::Invalid("slide dimensions must be positive".into()));
        }
        if !(self.pixel_scale_um > 0.0) {
            return Err(Error::Invalid("pixel scale must be positive".into()));
        }
        Ok(())
    }

    pub fn bounds(&self) -> BBox {
        BBox::from_xywh(0, 0, self.width_px as i64, self.height_px as i64)
    }

    pub fn long_side(&self) -> u64 {
        self.width_px.max(self.height_px)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Predicted,
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Review {
    Pending,
    Accepted,
    Rejected,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $kw:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($ty::$variant => $kw),+ }
            }
        }
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($kw => Ok($ty::$variant),)+
                    other => Err(Error::Invalid(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), other
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

keyword_enum!(Source { Human => "human", Predicted => "predicted", Corrected => "corrected" });
keyword_enum!(Review { Pending => "pending", Accepted => "accepted", Rejected => "rejected" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: String,
    pub slide_id: String,
    pub bbox: BBox,
    #[serde(default)]
    pub genus: Option<String>,
    #[serde(default)]
    pub confidence: Option<f64>,
    pub source: Source,
    pub review: Review,
    pub version: u32,
    /// Free-text remark, e.g. "fragment".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Annotation {
    pub fn human(
        annotation_id: impl Into<String>,
        slide_id: impl Into<String>,
        bbox: BBox,
        genus: Option<String>,
    ) -> Self {
        Self {
            annotation_id: annotation_id.into(),
            slide_id: slide_id.into(),
            bbox,
            genus,
            confidence: None,
            source: Source::Human,
            review: Review::Accepted,
            version: 1,
            note: None,
        }
    }

    pub fn predicted(
        annotation_id: impl Into<String>,
        slide_id: impl Into<String>,
        bbox: BBox,
        confidence: f64,
    ) -> Self {
        Self {
            annotation_id: annotation_id.into(),
            slide_id: slide_id.into(),
            bbox,
            genus: None,
            confidence: Some(confidence),
            source: Source::Predicted,
            review: Review::Pending,
            version: 1,
            note: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.annotation_id.is_empty() || self.annotation_id.contains([',', ' ', '\t']) {
            return Err(Error::Invalid(format!(
                "bad annotation id `{}`",
                self.annotation_id
            )));
        }
        if self.version < 1 {
            return Err(Error::Invalid(format!(
                "annotation `{}` has version 0",
                self.annotation_id
            )));
        }
        match (self.source, self.confidence) {
            (Source::Predicted, None) => {
                return Err(Error::Invalid(format!(
                    "predicted annotation `{}` lacks a confidence",
                    self.annotation_id
                )))
            }
            (Source::Human | Source::Corrected, Some(_)) => {
                return Err(Error::Invalid(format!(
                    "{} annotation `{}` must not carry a confidence",
                    self.source, self.annotation_id
                )))
            }
            _ => {}
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::OutOfRange(format!(
                    "confidence {c} of `{}`",
                    self.annotation_id
                )));
            }
        }
        if matches!(self.source, Source::Human | Source::Corrected) && self.review != Review::Accepted
        {
            return Err(Error::Invalid(format!(
                "{} annotation `{}` must be accepted",
                self.source, self.annotation_id
            )));
        }
        Ok(())
    }

    /// Accepted annotations are the ones used for training and statistics.
    pub fn is_accepted(&self) -> bool {
        self.review == Review::Accepted
    }
}

/// Per-genus class scores for one crop or focal plane, in catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector<S = f64> {
    scores: Vec<S>,
}

impl<S: Scalar> ProbabilityVector<S> {
    /// Wraps scores, requiring each to be finite and within `[0, 1]`.
    pub fn new(scores: Vec<S>) -> Result<Self> {
        for (i, &s) in scores.iter().enumerate() {
            if !s.is_finite_value() || s < S::zero() || s > S::one() {
                return Err(Error::OutOfRange(format!(
                    "score {:?} at class {i} is outside [0, 1]",
                    s
                )));
            }
        }
        Ok(Self { scores })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<S>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyVector);
        }
        let total = weights.iter().fold(S::zero(), |a, &b| a + b);
        if !(total > S::zero()) {
            return Err(Error::Invalid("weights sum to zero".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        let p = S::ratio(1, n as u64);
        Self { scores: vec![p; n] }
    }

    pub fn one_hot(n: usize, class: usize) -> Self {
        let mut scores = vec![S::zero(); n];
        scores[class] = S::one();
        Self { scores }
    }

    pub fn scores(&self) -> &[S] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn sum(&self) -> S {
        self.scores.iter().fold(S::zero(), |a, &b| a + b)
    }

    /// Index of the largest score; ties go to the lowest class index.
    pub fn argmax(&self) -> Result<usize> {
        let mut best: Option<(usize, S)> = None;
        for (i, &s) in self.scores.iter().enumerate() {
            match best {
                Some((_, b)) if !(s > b) => {}
                _ => best = Some((i, s)),
            }
        }
        best.map(|(i, _)| i).ok_or(Error::EmptyVector)
    }
}

/// Genus with the highest score, checked against the catalog size.
pub fn argmax_class<'c, S: Scalar>(
    catalog: &'c GenusCatalog,
    p: &ProbabilityVector<S>,
) -> Result<&'c str> {
    if p.is_empty() {
        return Err(Error::EmptyVector);
    }
    if p.len() != catalog.len() {
        return Err(Error::LengthMismatch {
            expected: catalog.len(),
            actual: p.len(),
        });
    }
    let i = p.argmax()?;
    Ok(catalog.name(i).expect("index within catalog"))
}
