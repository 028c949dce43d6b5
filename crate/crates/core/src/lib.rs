//! Two-step identification of hardwood vessel elements in macerated-fiber
//! slide scans.
//!
//! Vessel elements are first detected as bounding boxes on a downscaled view
//! of a gigapixel, multi-focal-plane slide, then classified to genus on
//! full-resolution crops. Per-plane class probabilities are fused and the
//! results are scored with detection (IOU matching, 11-point AP) and
//! classification (macro F1, confusion matrix) metrics. Reference annotations
//! grow through an iterative predict/review/merge loop.
//!
//! Module map:
//!
//! - [`catalog`], [`types`]: genus catalog, boxes, annotations, probability vectors
//! - [`slide_store`]: tiled pyramidal storage with memory-bounded region reads
//! - [`synth`]: deterministic synthetic slides with exact ground truth
//! - [`dataset`]: annotation persistence, leakage-safe splits, review merging
//! - [`augment`]: mosaic, color and geometric augmentation
//! - [`preprocess`]: tiling/stitching, crop extraction and normalization
//! - [`scorers`]: baseline detector and classifier, external predictions, fusion
//! - [`metrics`]: IOU, matching, AP/mAP, F-beta, confusion matrices
//! - [`pipeline`]: per-slide detect/classify/evaluate orchestration
//!
//! Score arithmetic is generic over [`Scalar`]; `f64` is the default and
//! [`Exact`] gives rational arithmetic for oracle comparisons.

pub mod augment;
pub mod catalog;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod scalar;
pub mod scorers;
pub mod slide_store;
pub mod synth;
pub mod types;

pub use catalog::GenusCatalog;
pub use error::{Error, Result};
pub use raster::Raster;
pub use scalar::{Exact, Scalar};
pub use types::{Annotation, BBox, ProbabilityVector, Review, SlideMeta, Source};

/// Detection with an `f64` confidence.
pub type Detection = scorers::Detection<f64>;
/// Detection with an exact rational confidence.
pub type ExactDetection = scorers::Detection<Exact>;
/// Single-precision detection, as produced by most external models.
pub type Detection32 = scorers::Detection<f32>;

pub type ExactProbabilityVector = ProbabilityVector<Exact>;
pub type ProbabilityVector32 = ProbabilityVector<f32>;

pub use metrics::MatchResult;

pub type MatchConfig = metrics::MatchConfig<f64>;
pub type ExactMatchConfig = metrics::MatchConfig<Exact>;
