//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vesselid::metrics::{match_detections, ConfusionMatrix, MatchConfig};
use vesselid::pipeline::{
    classify_slide, detect_slide, train_classifier, ClassifyConfig, DetectConfig,
};
use vesselid::scorers::{BaselineDetectorParams, CentroidClassifier, ThresholdMode};
use vesselid::slide_store::SlideContainer;
use vesselid::synth::{desk_profiles, generate, SynthSpec};
use vesselid::{Annotation, GenusCatalog};

pub const DESK_WIDTH: u32 = 2400;
pub const DESK_HEIGHT: u32 = 1800;
pub const DESK_WORKING_SIDE: u32 = 1200;
pub const DESK_TILE: u32 = 512;
/// Inverted-gray cut: anything at least this much darker than white. Otsu
/// splits light genera when a very dark one shares the slide.
pub const DESK_FOREGROUND_CUT: u8 = 40;

/// High-contrast desk-scale slide: separated elements, a couple of fibers.
pub fn desk_spec(slide: &str, maceration: &str, seed: u64, mix: &[(&str, f64)], count: usize) -> SynthSpec {
    let mut s = SynthSpec::new(slide, maceration, DESK_WIDTH, DESK_HEIGHT, seed);
    s.genus_mix = mix.iter().map(|(g, f)| (g.to_string(), *f)).collect();
    s.element_count = count;
    s.fiber_count = 2;
    s.max_pair_iou = 0.0;
    s.min_separation_px = 8;
    s
}

pub fn desk_detect_config() -> DetectConfig {
    DetectConfig {
        working_long_side: DESK_WORKING_SIDE,
        tile_size: 512,
        overlap: 128,
        detector: BaselineDetectorParams {
            threshold: ThresholdMode::Fixed(DESK_FOREGROUND_CUT),
            ..BaselineDetectorParams::default()
        },
        ..DetectConfig::default()
    }
}

/// One mono-genus training slide per genus, each its own maceration.
pub fn train_desk_classifier(
    root: &Path,
    catalog: &GenusCatalog,
    cfg: &ClassifyConfig,
    seed: u64,
    slides_per_genus: usize,
) -> CentroidClassifier {
    let profiles = desk_profiles();
    let mut made: Vec<(SlideContainer, Vec<Annotation>)> = Vec::new();
    for (gi, g) in catalog.names().iter().enumerate() {
        for k in 0..slides_per_genus {
            let id = format!("train-{gi}-{k}");
            let spec = desk_spec(&id, &format!("train-m-{gi}-{k}"), seed ^ (1000 + gi as u64 * 31 + k as u64), &[(g.as_str(), 1.0)], 30);
            made.push(generate(&root.join(&id), &spec, &profiles, DESK_TILE).unwrap());
        }
    }
    let refs: Vec<(&SlideContainer, &[Annotation])> = made.iter().map(|(c, a)| (c, a.as_slice())).collect();
    train_classifier(&refs, catalog, cfg).unwrap()
}

pub struct E2eOutcome {
    pub recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
    /// `(slide, false genera, missed genera)` for slides whose report was
    /// not exact.
    pub presence_errors: Vec<(String, Vec<String>, Vec<String>)>,
    pub elapsed: Duration,
}

/// Random 2 or 3 genus mix for a test slide.
pub fn random_mix(catalog: &GenusCatalog, rng: &mut ChaCha8Rng) -> Vec<(String, f64)> {
    let k = rng.random_range(2..=3);
    let mut names = catalog.names().to_vec();
    names.shuffle(rng);
    names.truncate(k);
    names.sort();
    names.into_iter().map(|g| (g, 1.0 / k as f64)).collect()
}

/// Generates `n_slides` mixed test slides, runs detection and
/// classification, and scores both against the synthetic ground truth.
pub fn run_desk_e2e(
    root: &Path,
    catalog: &GenusCatalog,
    classifier: &CentroidClassifier,
    cfg: &ClassifyConfig,
    seed: u64,
    n_slides: usize,
) -> E2eOutcome {
    let start = Instant::now();
    let profiles = desk_profiles();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let detect = desk_detect_config();
    let matching = MatchConfig::default();
    let mut confusion = ConfusionMatrix::for_catalog(catalog);
    let (mut tp, mut n_gt) = (0usize, 0usize);
    let mut presence_errors = Vec::new();
    for s in 0..n_slides {
        let mix = random_mix(catalog, &mut rng);
        let mix_ref: Vec<(&str, f64)> = mix.iter().map(|(g, f)| (g.as_str(), *f)).collect();
        let id = format!("test-{s:02}");
        let spec = desk_spec(&id, &format!("test-m-{s:02}"), rng.random(), &mix_ref, 30);
        let (slide, gt) = generate(&root.join(&id), &spec, &profiles, DESK_TILE).unwrap();
        let dets = detect_slide(&slide, &detect).unwrap();
        let gt_boxes: Vec<_> = gt.iter().map(|a| a.bbox).collect();
        let m = match_detections(&dets, &gt_boxes, &matching);
        tp += m.tp();
        n_gt += gt.len();
        let named: Vec<(String, vesselid::Detection)> =
            dets.iter().enumerate().map(|(i, d)| (format!("{id}-d-{i:05}"), *d)).collect();
        let out = classify_slide(&slide, &named, classifier, catalog, cfg).unwrap();
        for &(p, g) in &m.true_positives {
            let truth = catalog.class_index(gt[g].genus.as_deref().unwrap()).unwrap();
            let pred = catalog.class_index(&out.detections[p].genus).unwrap();
            confusion.add(truth, pred);
        }
        let expected: BTreeSet<String> = mix.iter().map(|(g, _)| g.clone()).collect();
        let got: BTreeSet<String> = out.report.present_genera().into_iter().map(String::from).collect();
        if expected != got {
            presence_errors.push((
                id,
                got.difference(&expected).cloned().collect(),
                expected.difference(&got).cloned().collect(),
            ));
        }
    }
    E2eOutcome {
        recall: tp as f64 / n_gt as f64,
        macro_f1: confusion.macro_f1(),
        confusion,
        presence_errors,
        elapsed: start.elapsed(),
    }
}

pub fn genus_counts(anns: &[Annotation]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for a in anns {
        *m.entry(a.genus.clone().unwrap_or_default()).or_insert(0) += 1;
    }
    m
}
