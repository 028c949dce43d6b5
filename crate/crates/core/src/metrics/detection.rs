//! Box overlap, greedy matching and 11-point interpolated average precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scorers::Detection;
use crate::types::BBox;

use super::classification::f_beta;

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<S: Scalar>(a: &BBox, b: &BBox) -> S {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return S::zero();
    }
    let union = a.area() + b.area() - inter;
    S::ratio(inter as u64, union as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig<S = f64> {
    /// A prediction is a true positive only when IOU is strictly greater.
    pub iou_threshold: S,
    /// Predictions below this confidence are ignored.
    pub confidence_threshold: S,
}

impl<S: Scalar> MatchConfig<S> {
    pub fn new(iou_threshold: S, confidence_threshold: S) -> Result<Self> {
        let unit = |v: S| v >= S::zero() && v <= S::one();
        if !unit(iou_threshold) || !unit(confidence_threshold) {
            return Err(Error::OutOfRange("thresholds must lie in [0, 1]".into()));
        }
        Ok(Self {
            iou_threshold,
            confidence_threshold,
        })
    }
}

impl<S: Scalar> Default for MatchConfig<S> {
    fn default() -> Self {
        Self {
            iou_threshold: S::ratio(1, 2),
            confidence_threshold: S::ratio(1, 4),
        }
    }
}

/// Assignment of predictions to ground truth. Indices refer to the slices
/// passed to [`match_detections`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(prediction, ground truth)` pairs.
    pub true_positives: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    /// Ground-truth boxes no prediction claimed.
    pub false_negatives: Vec<usize>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.true_positives.len()
    }
    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }
    pub fn fn_count(&self) -> usize {
        self.false_negatives.len()
    }

    /// `tp / (tp + fp)`, 0 when nothing was predicted.
    pub fn precision<S: Scalar>(&self) -> S {
        counts_precision(self.tp(), self.fp())
    }

    /// `tp / (tp + fn)`, 0 when there is no ground truth.
    pub fn recall<S: Scalar>(&self) -> S {
        counts_recall(self.tp(), self.fn_count())
    }
}

pub(crate) fn counts_precision<S: Scalar>(tp: usize, fp: usize) -> S {
    if tp + fp == 0 {
        S::zero()
    } else {
        S::ratio(tp as u64, (tp + fp) as u64)
    }
}

pub(crate) fn counts_recall<S: Scalar>(tp: usize, fn_: usize) -> S {
    if tp + fn_ == 0 {
        S::zero()
    } else {
        S::ratio(tp as u64, (tp + fn_) as u64)
    }
}

/// Prediction indices by descending confidence; equal confidences keep
/// input order.
fn confidence_order<S: Scalar>(preds: &[Detection<S>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// Claims the unmatched ground truth with the highest IOU (lowest index on
/// ties) if that IOU exceeds the threshold.
fn claim<S: Scalar>(pred: &BBox, gts: &[BBox], taken: &[bool], threshold: S) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (g, gt) in gts.iter().enumerate() {
        if taken[g] {
            continue;
        }
        let o = iou::<S>(pred, gt);
        match best {
            Some((_, b)) if !(o > b) => {}
            _ => best = Some((g, o)),
        }
    }
    best.filter(|&(_, o)| o > threshold).map(|(g, _)| g)
}

/// Greedy confidence-descending matching with single-claim ground truth.
pub fn match_detections<S: Scalar>(
    preds: &[Detection<S>],
    gts: &[BBox],
    cfg: &MatchConfig<S>,
) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for p in confidence_order(preds) {
        if preds[p].confidence < cfg.confidence_threshold {
            continue;
        }
        match claim(&preds[p].bbox, gts, &taken, cfg.iou_threshold) {
            Some(g) => {
                taken[g] = true;
                result.true_positives.push((p, g));
            }
            None => result.false_positives.push(p),
        }
    }
    result.false_negatives = (0..gts.len()).filter(|&g| !taken[g]).collect();
    result
}

/// One point of a precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrCurvePoint<S = f64> {
    pub r: S,
    pub p: S,
}

/// Precision/recall at every distinct confidence threshold, pooled over
/// images. Each image is matched against its own ground truth; predictions
/// are ranked globally. Returns an empty curve when there is no ground
/// truth.
pub fn pr_curve_pooled<S: Scalar>(
    images: &[(&[Detection<S>], &[BBox])],
    iou_threshold: S,
) -> Vec<PrCurvePoint<S>> {
    let n_gt: usize = images.iter().map(|(_, g)| g.len()).sum();
    if n_gt == 0 {
        return Vec::new();
    }
    let mut ranked: Vec<(usize, usize)> = Vec::new();
    for (i, (preds, _)) in images.iter().enumerate() {
        ranked.extend((0..preds.len()).map(|p| (i, p)));
    }
    let conf = |&(i, p): &(usize, usize)| images[i].0[p].confidence;
    ranked.sort_by(|a, b| {
        conf(b)
            .partial_cmp(&conf(a))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut taken: Vec<Vec<bool>> = images.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::new();
    for (k, &(i, p)) in ranked.iter().enumerate() {
        let (preds, gts) = images[i];
        match claim(&preds[p].bbox, gts, &taken[i], iou_threshold) {
            Some(g) => {
                taken[i][g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        let group_ends = ranked
            .get(k + 1)
            .is_none_or(|next| conf(next) != preds[p].confidence);
        if group_ends {
            curve.push(PrCurvePoint {
                r: S::ratio(tp as u64, n_gt as u64),
                p: S::ratio(tp as u64, (tp + fp) as u64),
            });
        }
    }
    curve
}

pub fn pr_curve<S: Scalar>(
    preds: &[Detection<S>],
    gts: &[BBox],
    iou_threshold: S,
) -> Vec<PrCurvePoint<S>> {
    pr_curve_pooled(&[(preds, gts)], iou_threshold)
}

/// Mean of the interpolated precision `max{p(r') : r' >= r}` at the eleven
/// recall levels 0, 0.1, ..., 1.
pub fn eleven_point_ap<S: Scalar>(curve: &[PrCurvePoint<S>]) -> S {
    let mut total = S::zero();
    for k in 0..=10u64 {
        let level = S::ratio(k, 10);
        let best = curve
            .iter()
            .filter(|pt| pt.r >= level)
            .fold(S::zero(), |m, pt| m.max_of(pt.p));
        total = total + best;
    }
    total / S::from_count(11)
}

pub fn average_precision_11pt<S: Scalar>(
    preds: &[Detection<S>],
    gts: &[BBox],
    iou_threshold: S,
) -> S {
    eleven_point_ap(&pr_curve(preds, gts, iou_threshold))
}

/// Arithmetic mean of per-class APs.
pub fn mean_average_precision<S: Scalar>(aps: &[S]) -> Result<S> {
    if aps.is_empty() {
        return Err(Error::Invalid("mAP of zero classes".into()));
    }
    let sum = aps.iter().fold(S::zero(), |a, &b| a + b);
    Ok(sum / S::from_count(aps.len() as u64))
}

/// Dataset-level AP, aggregated two ways over slides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlideAggregatedAp<S = f64> {
    /// AP of one curve built from all slides' predictions ranked together.
    pub micro: S,
    /// Mean of per-slide APs, over slides that have ground truth.
    pub macro_: S,
}

pub fn slide_aggregated_ap<S: Scalar>(
    slides: &[(&[Detection<S>], &[BBox])],
    iou_threshold: S,
) -> SlideAggregatedAp<S> {
    let micro = eleven_point_ap(&pr_curve_pooled(slides, iou_threshold));
    let per_slide: Vec<S> = slides
        .iter()
        .filter(|(_, g)| !g.is_empty())
        .map(|(p, g)| average_precision_11pt(p, g, iou_threshold))
        .collect();
    let macro_ = mean_average_precision(&per_slide).unwrap_or(S::zero());
    SlideAggregatedAp { micro, macro_ }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenusDetectionRow<S = f64> {
    pub genus: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: S,
    pub recall: S,
    pub f2: S,
}

/// Micro-aggregates per-slide match results by slide genus and orders the
/// rows by ascending F2 (ties by genus name).
pub fn per_genus_detection_report<S: Scalar>(
    per_slide: &[(String, MatchResult)],
) -> Vec<GenusDetectionRow<S>> {
    let mut acc: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (genus, m) in per_slide {
        let e = acc.entry(genus.as_str()).or_default();
        e.0 += m.tp();
        e.1 += m.fp();
        e.2 += m.fn_count();
    }
    let mut rows: Vec<GenusDetectionRow<S>> = acc
        .into_iter()
        .map(|(genus, (tp, fp, fn_))| {
            let precision = counts_precision(tp, fp);
            let recall = counts_recall(tp, fn_);
            GenusDetectionRow {
                genus: genus.to_string(),
                tp,
                fp,
                fn_,
                precision,
                recall,
                f2: f_beta(precision, recall, S::from_count(2)),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.f2.partial_cmp(&b.f2).unwrap_or(std::cmp::Ordering::Equal));
    rows
}
