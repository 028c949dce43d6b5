//! Detection and classification scorers behind a common binding, plus
//! probability fusion and per-slide presence reports.
//!
//! The in-tree scorers are deliberately simple: a threshold/connected
//! component detector and a nearest-centroid classifier on shape and texture
//! features. Predictions from any external model enter through
//! [`external`] text files and are scored identically.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BBox;

pub mod classifier;
pub mod detector;
pub mod external;
pub mod fusion;

pub use classifier::{crop_features, CentroidClassifier, FEATURE_NAMES};
pub use detector::{detect_baseline, label_components, otsu_threshold, BaselineDetectorParams, ThresholdMode};
pub use external::{
    parse_classification_file, parse_detection_file, write_classification_file, write_detection_file,
};
pub use fusion::{fuse, slide_report, FusionMode, PresenceEntry, PresenceRule, SlideReport};

/// A scored box in some coordinate frame (working view or level 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<S = f64> {
    pub bbox: BBox,
    pub confidence: S,
}

impl<S> Detection<S> {
    pub fn new(bbox: BBox, confidence: S) -> Self {
        Self { bbox, confidence }
    }
}

/// Which scorer a pipeline stage runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScorerBinding {
    BaselineDetector(BaselineDetectorParams),
    /// Nearest-centroid classifier loaded from a JSON table.
    BaselineClassifier { table: PathBuf },
    /// Precomputed predictions in the external text format.
    ExternalFile { path: PathBuf },
}

impl ScorerBinding {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScorerBinding::BaselineDetector(p) if p.min_area_px > p.max_area_px => Err(
                Error::Invalid("detector min_area_px exceeds max_area_px".into()),
            ),
            ScorerBinding::BaselineDetector(_) => Ok(()),
            ScorerBinding::BaselineClassifier { table: path } | ScorerBinding::ExternalFile { path } => {
                if path.exists() {
                    Ok(())
                } else {
                    Err(Error::Invalid(format!("scorer file {} not found", path.display())))
                }
            }
        }
    }
}
