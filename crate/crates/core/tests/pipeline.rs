mod common;

use std::collections::BTreeSet;

use common::*;
use vesselid::dataset::{merge_review, Decision, DatasetIndex, ReviewDecision};
use vesselid::metrics::MatchConfig;
use vesselid::pipeline::*;
use vesselid::preprocess::PlaneMode;
use vesselid::scorers::{parse_detection_file, write_detection_file, FusionMode};
use vesselid::slide_store::SlideContainer;
use vesselid::synth::{desk_profiles, generate};
use vesselid::{Annotation, Error, GenusCatalog, Review};

fn small(dir: &std::path::Path, id: &str, seed: u64, mix: &[(&str, f64)], n: usize) -> (SlideContainer, Vec<Annotation>) {
    let mut spec = desk_spec(id, &format!("m-{id}"), seed, mix, n);
    spec.width = 900;
    spec.height = 700;
    generate(&dir.join(id), &spec, &desk_profiles(), 256).unwrap()
}

fn small_detect() -> DetectConfig {
    DetectConfig { working_long_side: 450, tile_size: 256, overlap: 64, ..desk_detect_config() }
}

fn perfect(slide: &SlideContainer, gt: &[Annotation], catalog: &GenusCatalog) -> EvalSlide {
    let predictions = gt
        .iter()
        .map(|a| {
            let class = catalog.class_index(a.genus.as_deref().unwrap()).unwrap();
            ClassifiedDetection {
                annotation_id: a.annotation_id.clone(),
                bbox: a.bbox,
                confidence: 0.9,
                genus: a.genus.clone().unwrap(),
                probabilities: vesselid::ProbabilityVector::one_hot(catalog.len(), class),
            }
        })
        .collect();
    EvalSlide { slide: slide.meta().clone(), ground_truth: gt.to_vec(), predictions }
}

#[test]
fn blank_slide_gives_empty_detection_file() {
    let dir = tempfile::tempdir().unwrap();
    let (slide, gt) = small(dir.path(), "blank", 1, &[], 0);
    assert!(gt.is_empty());
    let cfg = DetectConfig { detector: vesselid::scorers::BaselineDetectorParams::default(), ..small_detect() };
    let dets = detect_slide(&slide, &cfg).unwrap();
    // two faint fibers are all there is; nothing passes the fixed cut
    let fixed = detect_slide(&slide, &small_detect()).unwrap();
    let text = write_detection_file("blank", 900, &[]);
    assert_eq!(parse_detection_file(&text, slide.meta(), "x").unwrap(), vec![]);
    assert!(fixed.len() <= 2 && dets.len() <= 2);
}

#[test]
fn detection_is_deterministic_and_in_level0_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let (a, gt) = small(dir.path(), "a", 3, &[("Fagus", 1.0)], 10);
    let (b, _) = small(&dir.path().join("again"), "a", 3, &[("Fagus", 1.0)], 10);
    let da = detect_slide(&a, &small_detect()).unwrap();
    let db = detect_slide(&b, &small_detect()).unwrap();
    let text = write_detection_file("a", 900, &da);
    assert_eq!(text, write_detection_file("a", 900, &db));
    assert_eq!(parse_detection_file(&text, a.meta(), "a.txt").unwrap(), da);
    let boxes: Vec<_> = gt.iter().map(|g| g.bbox).collect();
    let m = vesselid::metrics::match_detections(&da, &boxes, &MatchConfig::default());
    assert!(m.recall::<f64>() >= 0.9, "recall {}", m.recall::<f64>());
}

#[test]
fn detection_file_for_another_slide_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (slide, _) = small(dir.path(), "s1", 2, &[("Hevea", 1.0)], 4);
    let text = write_detection_file("s2", 900, &[]);
    assert!(parse_detection_file(&text, slide.meta(), "s2.txt").is_err());
}

#[test]
fn classification_modes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = GenusCatalog::default();
    let (train_a, gt_a) = small(dir.path(), "ta", 10, &[("Fagus", 1.0)], 12);
    let (train_b, gt_b) = small(dir.path(), "tb", 11, &[("Hevea", 1.0)], 8);
    let (test, gt) = small(dir.path(), "t", 12, &[("Fagus", 0.5), ("Hevea", 0.5)], 10);
    let slides = [(&train_a, gt_a.as_slice()), (&train_b, gt_b.as_slice())];

    for cfg in [
        ClassifyConfig::default(),
        ClassifyConfig { fusion: FusionMode::Maximum, ..ClassifyConfig::default() },
        ClassifyConfig { planes: PlaneMode::Single(3), ..ClassifyConfig::default() },
        ClassifyConfig { planes: PlaneMode::Stack3(2, 3, 4), ..ClassifyConfig::default() },
    ] {
        let clf = train_classifier(&slides, &catalog, &cfg).unwrap();
        assert_eq!(clf.trained_on_macerations().len(), 2);
        let named: Vec<_> = gt
            .iter()
            .map(|a| (a.annotation_id.clone(), vesselid::Detection::new(a.bbox, 0.9)))
            .collect();
        let out = classify_slide(&test, &named, &clf, &catalog, &cfg).unwrap();
        let right = out.detections.iter().zip(&gt).filter(|(d, g)| Some(&d.genus) == g.genus.as_ref()).count();
        assert!(right >= 9, "{cfg:?}: {right}/10 right");
        assert_eq!(out.report.present_genera(), vec!["Fagus", "Hevea"]);

        let one = classify_slide(&test, &named[..1], &clf, &catalog, &cfg).unwrap();
        assert_eq!(one.report.entries.iter().filter(|e| e.count > 0).count(), 1);
    }

    let missing = ClassifyConfig { planes: PlaneMode::Single(7), ..ClassifyConfig::default() };
    let err = train_classifier(&slides, &catalog, &missing).unwrap_err();
    assert!(err.to_string().contains("ta"), "{err}");
}

#[test]
fn perfect_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = GenusCatalog::default();
    let (a, gt_a) = small(dir.path(), "a", 20, &[("Fagus", 0.5), ("Salix", 0.5)], 8);
    let (b, gt_b) = small(dir.path(), "b", 21, &[("Hevea", 1.0)], 6);
    let slides = [perfect(&a, &gt_a, &catalog), perfect(&b, &gt_b, &catalog)];
    let report = evaluate(&slides, &catalog, &EvalConfig::default(), None).unwrap();
    assert_eq!(report.detection_ap.micro, 1.0);
    assert_eq!(report.detection_ap.macro_, 1.0);
    assert_eq!(report.genus_map, 1.0);
    assert_eq!(report.macro_f1, 1.0);
    assert!(report.per_genus.iter().all(|r| r.f2 == 1.0));
    assert!(report.merged_confusion.is_none());

    let merged = EvalConfig { merge_groups: default_merge_groups(), ..EvalConfig::default() };
    let report = evaluate(&slides, &catalog, &merged, None).unwrap();
    assert_eq!(report.merged_confusion.as_ref().unwrap().n(), 6);
}

#[test]
fn evaluation_refuses_leaked_macerations() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = GenusCatalog::default();
    let (a, gt) = small(dir.path(), "a", 30, &[("Fagus", 1.0)], 5);
    let slides = [perfect(&a, &gt, &catalog)];
    let trained: BTreeSet<String> = ["m-a".to_string()].into();
    assert!(matches!(evaluate(&slides, &catalog, &EvalConfig::default(), Some(&trained)), Err(Error::Leakage(_))));
    let other: BTreeSet<String> = ["m-z".to_string()].into();
    assert!(evaluate(&slides, &catalog, &EvalConfig::default(), Some(&other)).is_ok());
}

#[test]
fn one_loop_iteration_keeps_recall() {
    let dir = tempfile::tempdir().unwrap();
    let (slide, gt) = small(dir.path(), "loop", 40, &[("Betula", 1.0)], 12);
    let mut index = DatasetIndex::default();
    index.add_slide(slide.meta().clone()).unwrap();

    let cfg = small_detect();
    let dets = detect_slide(&slide, &cfg).unwrap();
    let preds = new_predictions(&index, "loop", &dets, 0.5).unwrap();
    assert_eq!(preds.len(), dets.len());
    index.add_annotations(preds.clone()).unwrap();
    // re-running prediction adds nothing new
    assert!(new_predictions(&index, "loop", &dets, 0.5).unwrap().is_empty());

    // an expert accepts true elements and rejects the rest
    let boxes: Vec<_> = gt.iter().map(|a| a.bbox).collect();
    let decisions: Vec<_> = preds
        .iter()
        .map(|p| {
            let hit = boxes.iter().any(|b| vesselid::metrics::iou::<f64>(b, &p.bbox) > 0.5);
            ReviewDecision {
                annotation_id: p.annotation_id.clone(),
                expected_version: Some(1),
                decision: if hit { Decision::Accept } else { Decision::Reject },
            }
        })
        .collect();
    merge_review(&mut index, &decisions, None, "expert", 0).unwrap();
    assert!(index.annotations_for("loop").iter().all(|a| a.review != Review::Pending));

    let accepted: Vec<_> = index.training_annotations("loop").iter().map(|a| a.bbox).collect();
    let (_, fx, fy) = working_view(&slide, &cfg).unwrap();
    let refit = DetectConfig { detector: refit_detector(&cfg.detector, &accepted, fx, fy), ..cfg.clone() };
    let recall = |c: &DetectConfig| {
        let d = detect_slide(&slide, c).unwrap();
        vesselid::metrics::match_detections(&d, &boxes, &MatchConfig::default()).recall::<f64>()
    };
    assert!(recall(&refit) >= recall(&cfg));
}
