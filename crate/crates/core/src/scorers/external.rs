//! Text formats for predictions produced outside this crate.
//!
//! Detection file:
//!
//! ```text
//! # slide=S001 long_side=5184
//! 120 88 260 140 0.91
//! ```
//!
//! Rows are `x_min y_min x_max y_max confidence` in a view whose long side is
//! `long_side`; they are rescaled to level-0 pixels on load.
//!
//! Classification file:
//!
//! ```text
//! # annotation_id Acacia Betula ...
//! S001-d-00000 0.9 0.1 ...
//! ```

use crate::catalog::GenusCatalog;
use crate::error::{Error, Result};
use crate::scalar::round_half_up;
use crate::types::{BBox, ProbabilityVector, SlideMeta};

use super::Detection;

/// Row sums may deviate from 1 by this much; such rows are renormalized.
pub const SUM_TOLERANCE: f64 = 1e-3;

fn header_field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key)?.strip_prefix('='))
}

/// Parses a detection file for `slide`; `origin` names the file in errors.
pub fn parse_detection_file(text: &str, slide: &SlideMeta, origin: &str) -> Result<Vec<Detection>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "missing `# slide=... long_side=...` header"))?;
    let header = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(origin, 1, "header must start with `#`"))?;
    let slide_id = header_field(header, "slide").ok_or_else(|| Error::parse(origin, 1, "header lacks slide="))?;
    if slide_id != slide.slide_id {
        return Err(Error::Invalid(format!(
            "{origin}: predictions are for slide `{slide_id}`, expected `{}`",
            slide.slide_id
        )));
    }
    let long_side: u64 = header_field(header, "long_side")
        .and_then(|v| v.parse().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::parse(origin, 1, "header lacks a positive long_side="))?;
    let factor = slide.long_side() as f64 / long_side as f64;

    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
        if fields.len() != 5 {
            return Err(Error::parse(origin, line_no, format!("expected 5 fields, got {}", fields.len())));
        }
        let conf = fields[4];
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::parse(origin, line_no, format!("confidence {conf} outside [0, 1]")));
        }
        let c: Vec<i64> = fields[..4].iter().map(|&v| round_half_up(v * factor) as i64).collect();
        let bbox = BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
        out.push(Detection::new(bbox, conf));
    }
    Ok(out)
}

/// Inverse of [`parse_detection_file`] for boxes already in the frame of
/// `long_side`.
pub fn write_detection_file(slide_id: &str, long_side: u64, detections: &[Detection]) -> String {
    let mut s = format!("# slide={slide_id} long_side={long_side}\n");
    for d in detections {
        s.push_str(&format!("{} {}\n", d.bbox, d.confidence));
    }
    s
}

/// Parses per-crop class scores, reordering columns into catalog order.
/// Rows whose sum is within [`SUM_TOLERANCE`] of 1 are renormalized; others
/// are rejected with their line number.
pub fn parse_classification_file(
    text: &str,
    catalog: &GenusCatalog,
    origin: &str,
) -> Result<Vec<(String, ProbabilityVector)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "missing `# annotation_id <genera...>` header"))?;
    let mut cols = header.trim().trim_start_matches('#').split_whitespace();
    if cols.next() != Some("annotation_id") {
        return Err(Error::parse(origin, 1, "header must begin with annotation_id"));
    }
    let columns: Vec<usize> = cols.map(|g| catalog.class_index(g)).collect::<Result<_>>()?;
    let mut seen = vec![false; catalog.len()];
    for &c in &columns {
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::DuplicateGenus(catalog.names()[c].clone()));
        }
    }

    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let mut toks = line.split_whitespace();
        let id = toks.next().unwrap_or_default().to_string();
        if id.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = toks
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
        if vals.len() != columns.len() {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected {} scores, got {}", columns.len(), vals.len()),
            ));
        }
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::parse(origin, line_no, "scores must be finite and non-negative"));
        }
        let sum: f64 = vals.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::parse(origin, line_no, format!("scores sum to {sum}, not 1")));
        }
        let mut scores = vec![0.0; catalog.len()];
        for (&c, v) in columns.iter().zip(vals) {
            scores[c] = v / sum;
        }
        let p = ProbabilityVector::new(scores).map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
        out.push((id, p));
    }
    Ok(out)
}

pub fn write_classification_file(catalog: &GenusCatalog, rows: &[(String, ProbabilityVector)]) -> String {
    let mut s = format!("# annotation_id {}\n", catalog.names().join(" "));
    for (id, p) in rows {
        s.push_str(id);
        for v in p.scores() {
            s.push_str(&format!(" {v}"));
        }
        s.push('\n');
    }
    s
}
