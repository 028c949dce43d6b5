//! Combining per-plane class scores and summarizing a slide.

use serde::{Deserialize, Serialize};

use crate::catalog::GenusCatalog;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::ProbabilityVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Element-wise mean; the result is still a distribution.
    #[default]
    Average,
    /// Element-wise maximum, not renormalized.
    Maximum,
}

pub fn fuse<S: Scalar>(vectors: &[ProbabilityVector<S>], mode: FusionMode) -> Result<ProbabilityVector<S>> {
    let first = vectors.first().ok_or(Error::EmptyVector)?;
    let n = first.len();
    for v in vectors {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: v.len(),
            });
        }
    }
    let scores = (0..n)
        .map(|k| {
            let col = vectors.iter().map(|v| v.scores()[k]);
            match mode {
                FusionMode::Average => {
                    col.fold(S::zero(), |a, b| a + b) / S::from_count(vectors.len() as u64)
                }
                FusionMode::Maximum => col.fold(S::zero(), S::max_of),
            }
        })
        .collect();
    ProbabilityVector::new(scores)
}

/// A genus is reported present when at least `min_count` confident
/// detections were assigned to it and they make up at least `min_fraction`
/// of all confident detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresenceRule {
    pub min_count: usize,
    pub min_fraction: f64,
    pub confidence_threshold: f64,
}

impl Default for PresenceRule {
    fn default() -> Self {
        Self {
            min_count: 3,
            min_fraction: 0.05,
            confidence_threshold: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceEntry {
    pub genus: String,
    pub count: usize,
    pub fraction: f64,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideReport {
    pub slide_id: String,
    /// Detections at or above the confidence threshold.
    pub counted: usize,
    /// One entry per catalog genus, catalog order.
    pub entries: Vec<PresenceEntry>,
}

impl SlideReport {
    pub fn present_genera(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| e.present).map(|e| e.genus.as_str()).collect()
    }
}

/// Summarizes classified detections `(class index, detection confidence)`.
pub fn slide_report(
    slide_id: &str,
    catalog: &GenusCatalog,
    classified: &[(usize, f64)],
    rule: &PresenceRule,
) -> Result<SlideReport> {
    let mut counts = vec![0usize; catalog.len()];
    for &(class, conf) in classified {
        if class >= catalog.len() {
            return Err(Error::OutOfRange(format!("class index {class}")));
        }
        if conf >= rule.confidence_threshold {
            counts[class] += 1;
        }
    }
    let counted: usize = counts.iter().sum();
    let entries = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let fraction = if counted == 0 { 0.0 } else { count as f64 / counted as f64 };
            PresenceEntry {
                genus: catalog.names()[i].clone(),
                count,
                fraction,
                present: count >= rule.min_count && count > 0 && fraction >= rule.min_fraction,
            }
        })
        .collect();
    Ok(SlideReport {
        slide_id: slide_id.to_string(),
        counted,
        entries,
    })
}
