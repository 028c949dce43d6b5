//! Folding expert review decisions back into the index.

use serde::{Deserialize, Serialize};

use crate::catalog::GenusCatalog;
use crate::error::{Error, Result};
use crate::types::{BBox, Review, Source};

use super::DatasetIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum Decision {
    Accept,
    /// Replaces the box and, when given, the genus.
    Adjust {
        bbox: BBox,
        #[serde(default)]
        genus: Option<String>,
    },
    Reject,
}

impl Decision {
    pub fn name(&self) -> &'static str {
        match self {
            Decision::Accept => "accept",
            Decision::Adjust { .. } => "adjust",
            Decision::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub annotation_id: String,
    /// When set, the decision only applies to this version.
    #[serde(default)]
    pub expected_version: Option<u32>,
    #[serde(flatten)]
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub annotation_id: String,
    pub slide_id: String,
    pub from_version: u32,
    pub to_version: u32,
    pub action: String,
    pub reviewer: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Applies all decisions or none. Every change bumps the version and is
/// recorded in the index's audit trail; nothing is deleted.
pub fn merge_review(
    index: &mut DatasetIndex,
    decisions: &[ReviewDecision],
    catalog: Option<&GenusCatalog>,
    reviewer: &str,
    timestamp: u64,
) -> Result<Vec<AuditRecord>> {
    let mut seen = std::collections::HashSet::new();
    for d in decisions {
        if !seen.insert(d.annotation_id.as_str()) {
            return Err(Error::Invalid(format!("two decisions for `{}`", d.annotation_id)));
        }
        let a = index
            .find(&d.annotation_id)
            .ok_or_else(|| Error::UnknownAnnotation(d.annotation_id.clone()))?;
        if let Some(v) = d.expected_version {
            if v != a.version {
                return Err(Error::VersionConflict {
                    id: a.annotation_id.clone(),
                    expected: v,
                    current: a.version,
                });
            }
        }
        if let Decision::Adjust { bbox, genus } = &d.decision {
            let slide = index.slide(&a.slide_id)?;
            if !slide.bounds().contains(bbox) {
                return Err(Error::OutOfRange(format!(
                    "adjusted box {bbox} exceeds slide `{}`",
                    slide.slide_id
                )));
            }
            if let (Some(cat), Some(g)) = (catalog, genus) {
                cat.class_index(g)?;
            }
        }
    }

    let mut records = Vec::with_capacity(decisions.len());
    for d in decisions {
        let a = index.find_mut(&d.annotation_id).expect("validated above");
        let from = a.version;
        match &d.decision {
            Decision::Accept => {
                a.source = Source::Corrected;
                a.review = Review::Accepted;
                a.confidence = None;
            }
            Decision::Adjust { bbox, genus } => {
                a.bbox = *bbox;
                if genus.is_some() {
                    a.genus = genus.clone();
                }
                a.source = Source::Corrected;
                a.review = Review::Accepted;
                a.confidence = None;
            }
            Decision::Reject => {
                a.review = Review::Rejected;
            }
        }
        a.version += 1;
        records.push(AuditRecord {
            annotation_id: a.annotation_id.clone(),
            slide_id: a.slide_id.clone(),
            from_version: from,
            to_version: a.version,
            action: d.decision.name().to_string(),
            reviewer: reviewer.to_string(),
            timestamp,
        });
    }
    index.audit.extend(records.iter().cloned());
    Ok(records)
}
