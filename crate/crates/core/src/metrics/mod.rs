//! Detection and classification evaluation.
//!
//! Detection: boxes are matched greedily in descending confidence order;
//! each ground-truth box can be claimed once, and only when IOU is strictly
//! above the threshold. AP is the 11-point interpolated average precision.
//!
//! Classification: per-class precision/recall from a confusion matrix,
//! macro F1, and merging of genera that experts cannot separate.

mod classification;
mod detection;
pub mod report;

pub use classification::{f_beta, merge_groups, ConfusionMatrix};
pub use detection::{
    average_precision_11pt, eleven_point_ap, iou, match_detections, mean_average_precision,
    per_genus_detection_report, pr_curve, pr_curve_pooled, slide_aggregated_ap,
    GenusDetectionRow, MatchConfig, MatchResult, PrCurvePoint, SlideAggregatedAp,
};
