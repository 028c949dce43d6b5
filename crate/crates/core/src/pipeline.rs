//! Per-slide orchestration of the two steps: detection on a downscaled,
//! tiled view, then per-plane crop classification with probability fusion,
//! and evaluation of both against ground truth.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::GenusCatalog;
use crate::dataset::{check_leakage, DatasetIndex};
use crate::error::{Error, Result};
use crate::metrics::{
    match_detections, mean_average_precision, per_genus_detection_report, pr_curve_pooled,
    slide_aggregated_ap, eleven_point_ap, ConfusionMatrix, GenusDetectionRow, MatchConfig,
    SlideAggregatedAp,
};
use crate::preprocess::{
    extract_crop, grayscale, normalize_crop, plan_tiles, stitch, NormalizeConfig, NormalizedCrop,
    PlaneMode, DEFAULT_WORKING_LONG_SIDE,
};
use crate::raster::Raster;
use crate::scorers::classifier::Features;
use crate::scorers::{
    crop_features, detect_baseline, fuse, slide_report, BaselineDetectorParams, CentroidClassifier,
    Detection, FusionMode, PresenceRule, SlideReport, ThresholdMode,
};
use crate::scorers::detector::resolve_threshold;
use crate::slide_store::SlideContainer;
use crate::types::{Annotation, BBox, ProbabilityVector, Review, SlideMeta, Source};

pub const DEFAULT_DETECT_TILE: u32 = 2560;
pub const DEFAULT_DETECT_OVERLAP: u32 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Long side of the view the detector runs on; capped at the slide's.
    pub working_long_side: u32,
    pub tile_size: u32,
    pub overlap: u32,
    /// 1-based plane ordinal; the middle plane when unset.
    pub plane: Option<u32>,
    pub detector: BaselineDetectorParams,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            working_long_side: DEFAULT_WORKING_LONG_SIDE,
            tile_size: DEFAULT_DETECT_TILE,
            overlap: DEFAULT_DETECT_OVERLAP,
            plane: None,
            detector: BaselineDetectorParams::default(),
        }
    }
}

impl DetectConfig {
    pub fn plane_for(&self, meta: &SlideMeta) -> Result<u32> {
        let p = self.plane.unwrap_or(meta.plane_count.div_ceil(2));
        if p == 0 || p > meta.plane_count {
            return Err(Error::OutOfRange(format!(
                "detection plane {p} of {} on slide `{}`",
                meta.plane_count, meta.slide_id
            )));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    pub normalize: NormalizeConfig,
    pub planes: PlaneMode,
    pub fusion: FusionMode,
    /// Context added around each box, as a fraction of its sides.
    pub margin: f64,
    pub presence: PresenceRule,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            normalize: NormalizeConfig::default(),
            planes: PlaneMode::PerPlane,
            fusion: FusionMode::Average,
            margin: 0.0,
            presence: PresenceRule::default(),
        }
    }
}

/// Detector input for a slide: the grayscale working view and the level-0
/// pixels per view pixel along each axis.
pub fn working_view(slide: &SlideContainer, cfg: &DetectConfig) -> Result<(Raster, f64, f64)> {
    let meta = slide.meta();
    let plane = cfg.plane_for(meta)?;
    let long = (cfg.working_long_side as u64).min(meta.long_side()) as u32;
    let view = grayscale(&slide.downscaled_view(plane - 1, long)?);
    let fx = meta.width_px as f64 / view.width() as f64;
    let fy = meta.height_px as f64 / view.height() as f64;
    Ok((view, fx, fy))
}

/// Runs the tiled baseline detector on a grayscale image. An Otsu threshold
/// is resolved once over the whole image so every tile uses the same cut.
pub fn detect_tiled(
    gray: &Raster,
    params: &BaselineDetectorParams,
    tile_size: u32,
    overlap: u32,
) -> Result<Vec<Detection>> {
    let t = resolve_threshold(gray, params.threshold);
    let fixed = BaselineDetectorParams {
        threshold: ThresholdMode::Fixed(t),
        ..*params
    };
    let plan = plan_tiles(gray.width(), gray.height(), tile_size, overlap)?;
    let mut per_tile = Vec::with_capacity(plan.grid.len());
    for (i, rect) in plan.grid.iter().enumerate() {
        let tile = if plan.grid.len() == 1 {
            gray.clone()
        } else {
            gray.crop(rect)?
        };
        per_tile.push((i, detect_baseline(&tile, &fixed)?));
    }
    stitch(&per_tile, &plan)
}

/// Maps a working-view box to level 0 and clips it to the slide.
fn to_level0(b: &BBox, fx: f64, fy: f64, bounds: &BBox) -> Option<BBox> {
    let x_min = (b.x_min as f64 * fx).floor() as i64;
    let y_min = (b.y_min as f64 * fy).floor() as i64;
    let x_max = (b.x_max as f64 * fx).ceil() as i64;
    let y_max = (b.y_max as f64 * fy).ceil() as i64;
    BBox { x_min, y_min, x_max, y_max }.clip(bounds)
}

/// Detections of one slide in level-0 coordinates.
pub fn detect_slide(slide: &SlideContainer, cfg: &DetectConfig) -> Result<Vec<Detection>> {
    let (view, fx, fy) = working_view(slide, cfg)?;
    let dets = detect_tiled(&view, &cfg.detector, cfg.tile_size, cfg.overlap)?;
    let bounds = slide.meta().bounds();
    Ok(dets
        .iter()
        .filter_map(|d| to_level0(&d.bbox, fx, fy, &bounds).map(|b| Detection::new(b, d.confidence)))
        .collect())
}

/// Normalized classifier inputs for one box, one per input of the plane
/// mode (a single stacked input for `Stack3`).
pub fn crop_inputs(slide: &SlideContainer, bbox: &BBox, cfg: &ClassifyConfig) -> Result<Vec<NormalizedCrop>> {
    let meta = slide.meta();
    let planes = cfg.planes.planes(meta.plane_count).map_err(|e| {
        Error::Invalid(format!("slide `{}` lacks the requested planes: {e}", meta.slide_id))
    })?;
    let mut crops = Vec::with_capacity(planes.len());
    for p in &planes {
        let (raster, _) = extract_crop(slide, bbox, p - 1, cfg.margin)?;
        crops.push(normalize_crop(&raster, &cfg.normalize)?);
    }
    match cfg.planes {
        PlaneMode::Stack3(..) => {
            let first = &crops[0];
            let (w, h) = first.raster.dims();
            let gray: Vec<Raster> = crops.iter().map(|c| grayscale(&c.raster)).collect();
            let stacked = Raster::from_fn(w, h, 3, |x, y, c| gray[c as usize].get(x, y, 0));
            Ok(vec![NormalizedCrop {
                raster: stacked,
                content: first.content,
                scale: first.scale,
            }])
        }
        _ => Ok(crops),
    }
}

/// Classifies each input crop and fuses the results.
pub fn classify_box(
    slide: &SlideContainer,
    bbox: &BBox,
    classifier: &CentroidClassifier,
    cfg: &ClassifyConfig,
) -> Result<ProbabilityVector> {
    let inputs = crop_inputs(slide, bbox, cfg)?;
    let scores = inputs.iter().map(|c| classifier.classify(c)).collect::<Result<Vec<_>>>()?;
    fuse(&scores, cfg.fusion)
}

/// A detection with its fused genus probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedDetection {
    pub annotation_id: String,
    pub bbox: BBox,
    pub confidence: f64,
    pub genus: String,
    pub probabilities: ProbabilityVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideClassification {
    pub slide_id: String,
    pub detections: Vec<ClassifiedDetection>,
    pub report: SlideReport,
}

/// Classifies `(annotation id, detection)` pairs of one slide and builds
/// its presence report.
pub fn classify_slide(
    slide: &SlideContainer,
    detections: &[(String, Detection)],
    classifier: &CentroidClassifier,
    catalog: &GenusCatalog,
    cfg: &ClassifyConfig,
) -> Result<SlideClassification> {
    if classifier.genera() != catalog.names() {
        return Err(Error::Invalid("classifier and catalog list different genera".into()));
    }
    let mut out = Vec::with_capacity(detections.len());
    let mut summary = Vec::with_capacity(detections.len());
    for (id, d) in detections {
        let probs = classify_box(slide, &d.bbox, classifier, cfg)?;
        let class = probs.argmax()?;
        summary.push((class, d.confidence));
        out.push(ClassifiedDetection {
            annotation_id: id.clone(),
            bbox: d.bbox,
            confidence: d.confidence,
            genus: catalog.names()[class].clone(),
            probabilities: probs,
        });
    }
    let report = slide_report(&slide.meta().slide_id, catalog, &summary, &cfg.presence)?;
    Ok(SlideClassification {
        slide_id: slide.meta().slide_id.clone(),
        detections: out,
        report,
    })
}

/// Training samples from accepted, genus-labelled annotations: one per
/// classifier input, so per-plane mode yields one sample per plane.
pub fn training_samples(
    slide: &SlideContainer,
    annotations: &[Annotation],
    catalog: &GenusCatalog,
    cfg: &ClassifyConfig,
) -> Result<Vec<(usize, Features)>> {
    let mut samples = Vec::new();
    for a in annotations.iter().filter(|a| a.is_accepted()) {
        let Some(g) = &a.genus else { continue };
        let class = catalog.class_index(g)?;
        for crop in crop_inputs(slide, &a.bbox, cfg)? {
            samples.push((class, crop_features(&crop)));
        }
    }
    Ok(samples)
}

/// Fits the baseline classifier on several slides and records which
/// macerations it has seen.
pub fn train_classifier(
    slides: &[(&SlideContainer, &[Annotation])],
    catalog: &GenusCatalog,
    cfg: &ClassifyConfig,
) -> Result<CentroidClassifier> {
    let mut samples = Vec::new();
    let mut macerations = BTreeSet::new();
    for (slide, anns) in slides {
        let s = training_samples(slide, anns, catalog, cfg)?;
        if !s.is_empty() {
            macerations.insert(slide.meta().maceration_id.clone());
        }
        samples.extend(s);
    }
    CentroidClassifier::fit(catalog, &samples, macerations)
}

/// Detector area limits refit to accepted boxes, in working-view pixels:
/// a quarter of the smallest box area up to four times the largest. The
/// lower limit never drops below the current one.
pub fn refit_detector(
    current: &BaselineDetectorParams,
    accepted: &[BBox],
    fx: f64,
    fy: f64,
) -> BaselineDetectorParams {
    let areas: Vec<f64> = accepted
        .iter()
        .map(|b| b.width() as f64 / fx * b.height() as f64 / fy)
        .collect();
    let (Some(lo), Some(hi)) = (
        areas.iter().copied().reduce(f64::min),
        areas.iter().copied().reduce(f64::max),
    ) else {
        return *current;
    };
    let min_area_px = current.min_area_px.max((lo / 4.0).floor() as u64);
    let max_area_px = ((hi * 4.0).ceil() as u64).max(min_area_px);
    BaselineDetectorParams {
        min_area_px,
        max_area_px,
        ..*current
    }
}

/// New predicted annotations for detections that do not overlap (IOU above
/// `overlap_iou`) any annotation still in play on the slide.
pub fn new_predictions(
    index: &DatasetIndex,
    slide_id: &str,
    detections: &[Detection],
    overlap_iou: f64,
) -> Result<Vec<Annotation>> {
    index.slide(slide_id)?;
    let existing: Vec<BBox> = index
        .annotations_for(slide_id)
        .iter()
        .filter(|a| a.review != Review::Rejected || a.source == Source::Predicted)
        .map(|a| a.bbox)
        .collect();
    let mut scratch = index.clone();
    let mut out = Vec::new();
    for d in detections {
        if existing
            .iter()
            .any(|b| crate::metrics::iou::<f64>(b, &d.bbox) > overlap_iou)
        {
            continue;
        }
        let id = scratch.next_prediction_id(slide_id);
        let a = Annotation::predicted(id, slide_id, d.bbox, d.confidence.clamp(0.0, 1.0));
        scratch.add_annotations(vec![a.clone()])?;
        out.push(a);
    }
    Ok(out)
}

/// Ground truth and predictions of one evaluated slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSlide {
    pub slide: SlideMeta,
    pub ground_truth: Vec<Annotation>,
    pub predictions: Vec<ClassifiedDetection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub matching: MatchConfig,
    /// Genus groups collapsed into one class for an extra confusion matrix.
    #[serde(default)]
    pub merge_groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Class-agnostic vessel-element AP.
    pub detection_ap: SlideAggregatedAp,
    /// Mean over genera with ground truth of the per-genus AP, where a
    /// prediction belongs to its argmax genus.
    pub genus_map: f64,
    pub per_genus: Vec<GenusDetectionRow>,
    pub confusion: ConfusionMatrix,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub merged_confusion: Option<ConfusionMatrix>,
    pub merged_macro_f1: Option<f64>,
    pub slide_reports: Vec<SlideReport>,
}

/// Genera that are hard to tell apart from vessel elements alone, merged
/// for the coarser confusion view.
pub fn default_merge_groups() -> Vec<Vec<String>> {
    [vec!["Liquidambar", "Schima", "Fagus"], vec!["Populus", "Salix"]]
        .iter()
        .map(|g| g.iter().map(|s| s.to_string()).collect())
        .collect()
}

/// Genus label used in the per-genus report for slides holding several
/// genera.
pub const MIXED_SLIDE_LABEL: &str = "mixed";

/// Scores predictions against accepted ground truth. Classification is
/// scored on matched pairs whose ground truth has a genus. When
/// `trained_on` is given, evaluating any of those macerations is refused.
pub fn evaluate(
    slides: &[EvalSlide],
    catalog: &GenusCatalog,
    cfg: &EvalConfig,
    trained_on: Option<&BTreeSet<String>>,
) -> Result<EvalReport> {
    if let Some(train) = trained_on {
        check_leakage(
            train.iter().map(String::as_str),
            slides.iter().map(|s| s.slide.maceration_id.as_str()),
        )?;
    }
    let mut seen = BTreeSet::new();
    for s in slides {
        if !seen.insert(s.slide.slide_id.as_str()) {
            return Err(Error::Invalid(format!("slide `{}` evaluated twice", s.slide.slide_id)));
        }
        if let Some(a) = s.ground_truth.iter().find(|a| a.slide_id != s.slide.slide_id) {
            return Err(Error::Invalid(format!(
                "annotation `{}` belongs to slide `{}`, not `{}`",
                a.annotation_id, a.slide_id, s.slide.slide_id
            )));
        }
    }

    let gts: Vec<Vec<&Annotation>> = slides
        .iter()
        .map(|s| s.ground_truth.iter().filter(|a| a.is_accepted()).collect())
        .collect();
    let gt_boxes: Vec<Vec<BBox>> = gts.iter().map(|g| g.iter().map(|a| a.bbox).collect()).collect();
    let dets: Vec<Vec<Detection>> = slides
        .iter()
        .map(|s| s.predictions.iter().map(|p| Detection::new(p.bbox, p.confidence)).collect())
        .collect();

    let pairs: Vec<(&[Detection], &[BBox])> = dets
        .iter()
        .zip(&gt_boxes)
        .map(|(d, g)| (d.as_slice(), g.as_slice()))
        .collect();
    let detection_ap = slide_aggregated_ap(&pairs, cfg.matching.iou_threshold);

    let mut per_genus_aps = Vec::new();
    for g in catalog.names() {
        let class_dets: Vec<Vec<Detection>> = slides
            .iter()
            .map(|s| {
                s.predictions
                    .iter()
                    .filter(|p| &p.genus == g)
                    .map(|p| Detection::new(p.bbox, p.confidence))
                    .collect()
            })
            .collect();
        let class_gts: Vec<Vec<BBox>> = gts
            .iter()
            .map(|v| v.iter().filter(|a| a.genus.as_ref() == Some(g)).map(|a| a.bbox).collect())
            .collect();
        if class_gts.iter().all(Vec::is_empty) {
            continue;
        }
        let pairs: Vec<(&[Detection], &[BBox])> = class_dets
            .iter()
            .zip(&class_gts)
            .map(|(d, g)| (d.as_slice(), g.as_slice()))
            .collect();
        per_genus_aps.push(eleven_point_ap(&pr_curve_pooled(&pairs, cfg.matching.iou_threshold)));
    }
    let genus_map = mean_average_precision(&per_genus_aps).unwrap_or(0.0);

    let mut confusion = ConfusionMatrix::for_catalog(catalog);
    let mut per_slide = Vec::with_capacity(slides.len());
    let mut slide_reports = Vec::with_capacity(slides.len());
    for (i, s) in slides.iter().enumerate() {
        let m = match_detections(&dets[i], &gt_boxes[i], &cfg.matching);
        for &(p, g) in &m.true_positives {
            if let Some(genus) = &gts[i][g].genus {
                let truth = catalog.class_index(genus)?;
                let predicted = catalog.class_index(&s.predictions[p].genus)?;
                confusion.add(truth, predicted);
            }
        }
        let label = s.slide.genus.clone().unwrap_or_else(|| MIXED_SLIDE_LABEL.to_string());
        per_slide.push((label, m));
        let summary = s
            .predictions
            .iter()
            .map(|p| Ok((catalog.class_index(&p.genus)?, p.confidence)))
            .collect::<Result<Vec<_>>>()?;
        slide_reports.push(slide_report(&s.slide.slide_id, catalog, &summary, &PresenceRule {
            confidence_threshold: cfg.matching.confidence_threshold,
            ..PresenceRule::default()
        })?);
    }
    let per_genus = per_genus_detection_report(&per_slide);

    let (merged_confusion, merged_macro_f1) = if cfg.merge_groups.is_empty() {
        (None, None)
    } else {
        let mapping: HashMap<String, String> = crate::metrics::merge_groups(&cfg.merge_groups);
        let merged = confusion.merge_classes(&mapping);
        let f1 = merged.macro_f1();
        (Some(merged), Some(f1))
    };

    Ok(EvalReport {
        detection_ap,
        genus_map,
        per_genus,
        macro_f1: confusion.macro_f1(),
        accuracy: confusion.accuracy(),
        confusion,
        merged_confusion,
        merged_macro_f1,
        slide_reports,
    })
}
