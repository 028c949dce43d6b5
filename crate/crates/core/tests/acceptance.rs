//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line each; exits nonzero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use vesselid::augment::{mosaic, mosaic_layout, LabeledBox, MosaicConfig, Sample};
use vesselid::dataset::{check_leakage, split, DatasetIndex, Partition, SplitRatios};
use vesselid::metrics::{average_precision_11pt, f_beta, match_detections, ConfusionMatrix, MatchConfig};
use vesselid::pipeline::{
    classify_box, detect_tiled, train_classifier, ClassifyConfig,
};
use vesselid::preprocess::{normalize_crop, NormalizeConfig, NormalizeMode, PlaneMode};
use vesselid::scorers::detector::resolve_threshold;
use vesselid::scorers::{detect_baseline, BaselineDetectorParams, FusionMode, ThresholdMode};
use vesselid::slide_store::{RegionRequest, SlideContainer, DEFAULT_READ_BUDGET};
use vesselid::synth::{default_profiles, desk_profiles, generate, Scene, SynthSpec};
use vesselid::{Annotation, BBox, Exact, ExactDetection, GenusCatalog, Raster, SlideMeta};

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- Table 1

fn table1_f2() -> Outcome {
    // genus, precision, recall, F2 as published
    let rows = [
        ("Liquidambar", 0.8885, 0.6145, 0.6549),
        ("Salix", 0.9109, 0.6317, 0.6730),
        ("Fagus", 0.9357, 0.6799, 0.7192),
        ("Populus", 0.9578, 0.6855, 0.7268),
        ("Eucalyptus", 0.8125, 0.7629, 0.7723),
        ("Hevea", 0.5060, 0.9037, 0.7809),
        ("Schima", 0.8736, 0.8537, 0.8576),
        ("Betula", 0.8961, 0.8581, 0.8654),
        ("Acacia", 0.8753, 0.8950, 0.8910),
    ];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (genus, p, r, f2) in rows {
        let got = f_beta::<f64>(p, r, 2.0);
        let oracle = 5.0 * p * r / (4.0 * p + r);
        if (got - oracle).abs() > 1e-12 {
            return Err(format!("{genus}: f_beta {got} differs from formula {oracle}"));
        }
        worst = worst.max((got - f2).abs());
    }
    let t = start.elapsed();
    check(
        worst <= 5e-4 && t < Duration::from_secs(1),
        format!("max |F2 - table| = {worst:.6} over 9 genera in {t:?}"),
    )
}

// ------------------------------------------------------------- AP oracle

fn random_box(rng: &mut ChaCha8Rng, extent: i64) -> BBox {
    let x = rng.random_range(0..extent);
    let y = rng.random_range(0..extent);
    let w = rng.random_range(1..=extent / 2);
    let h = rng.random_range(1..=extent / 2);
    BBox::from_xywh(x, y, w, h)
}

/// Instance on a small grid with confidences in tenths, so ties in both
/// overlap and confidence are common.
fn random_instance(rng: &mut ChaCha8Rng, max_gt: usize, max_pred: usize) -> (Vec<BBox>, Vec<(BBox, i64)>) {
    let n_gt = rng.random_range(0..=max_gt);
    let n_pred = rng.random_range(0..=max_pred);
    let gts: Vec<BBox> = (0..n_gt).map(|_| random_box(rng, 12)).collect();
    let preds = (0..n_pred)
        .map(|_| {
            let b = if !gts.is_empty() && rng.random_bool(0.6) {
                let g = gts[rng.random_range(0..gts.len())];
                let d = |rng: &mut ChaCha8Rng| rng.random_range(-1..=1);
                BBox::new(g.x_min + d(rng), g.y_min + d(rng), g.x_max + d(rng), g.y_max + d(rng))
                    .unwrap_or(g)
            } else {
                random_box(rng, 12)
            };
            (b, rng.random_range(0..=10i64))
        })
        .collect();
    (gts, preds)
}

/// 2 * intersection > union, i.e. IOU strictly above one half.
fn oracle_iou_above_half(a: &BBox, b: &BBox) -> bool {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0);
    let inter = ix * iy;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    inter > 0 && 2 * inter > union
}

fn oracle_overlap(a: &BBox, b: &BBox) -> Ratio<i64> {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0);
    let inter = ix * iy;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    Ratio::new(inter, union)
}

/// True positives among predictions with confidence >= `tau`, matching in
/// descending confidence (stable), each claiming its best free ground truth.
fn oracle_tp(gts: &[BBox], preds: &[(BBox, i64)], tau: i64) -> (usize, usize) {
    let mut idx: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].1 >= tau).collect();
    idx.sort_by_key(|&i| std::cmp::Reverse(preds[i].1));
    let mut free = vec![true; gts.len()];
    let mut tp = 0;
    for &i in &idx {
        let mut best: Option<(usize, Ratio<i64>)> = None;
        for g in 0..gts.len() {
            if !free[g] {
                continue;
            }
            let o = oracle_overlap(&preds[i].0, &gts[g]);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            if oracle_iou_above_half(&preds[i].0, &gts[g]) {
                free[g] = false;
                tp += 1;
            }
        }
    }
    (tp, idx.len())
}

/// Exhaustive sweep over every distinct confidence, then direct
/// max-interpolation at recall 0, 0.1, ..., 1.
fn oracle_ap(gts: &[BBox], preds: &[(BBox, i64)]) -> Ratio<i64> {
    if gts.is_empty() {
        return Ratio::from_integer(0);
    }
    let taus: BTreeSet<i64> = preds.iter().map(|p| p.1).collect();
    let points: Vec<(Ratio<i64>, Ratio<i64>)> = taus
        .iter()
        .map(|&t| {
            let (tp, n) = oracle_tp(gts, preds, t);
            (Ratio::new(tp as i64, gts.len() as i64), Ratio::new(tp as i64, n as i64))
        })
        .collect();
    let mut total = Ratio::from_integer(0);
    for k in 0..=10 {
        let level = Ratio::new(k, 10);
        let best = points
            .iter()
            .filter(|(r, _)| *r >= level)
            .map(|(_, p)| *p)
            .max()
            .unwrap_or(Ratio::from_integer(0));
        total += best;
    }
    total / 11
}

fn ap_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA9);
    for case in 0..200 {
        let (gts, preds) = random_instance(&mut rng, 8, 12);
        let expected = oracle_ap(&gts, &preds);
        let exact: Vec<ExactDetection> = preds
            .iter()
            .map(|(b, c)| ExactDetection::new(*b, Exact::new(*c, 10)))
            .collect();
        let got = average_precision_11pt(&exact, &gts, Exact::new(1, 2));
        if got != expected {
            return Err(format!("case {case}: exact AP {got} != oracle {expected}"));
        }
        let float: Vec<vesselid::Detection> = preds
            .iter()
            .map(|(b, c)| vesselid::Detection::new(*b, *c as f64 / 10.0))
            .collect();
        let got_f = average_precision_11pt(&float, &gts, 0.5);
        let expected_f = {
            // same interpolation in floating point
            let taus: BTreeSet<i64> = preds.iter().map(|p| p.1).collect();
            let pts: Vec<(f64, f64)> = taus
                .iter()
                .map(|&t| {
                    let (tp, n) = oracle_tp(&gts, &preds, t);
                    (tp as f64 / gts.len().max(1) as f64, tp as f64 / n as f64)
                })
                .collect();
            let mut total = 0.0;
            for k in 0..=10u64 {
                let level = k as f64 / 10.0;
                total += pts.iter().filter(|(r, _)| *r >= level).fold(0.0f64, |m, (_, p)| m.max(*p));
            }
            if gts.is_empty() {
                0.0
            } else {
                total / 11.0
            }
        };
        if got_f != expected_f {
            return Err(format!("case {case}: f64 AP {got_f} != oracle {expected_f}"));
        }
    }
    Ok("200/200 instances equal the brute-force oracle (exact and f64)".into())
}

// ------------------------------------------------------ matching properties

fn matching_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3A7C);
    for case in 0..1000 {
        let (gts, raw) = random_instance(&mut rng, 8, 12);
        let preds: Vec<vesselid::Detection> = raw
            .iter()
            .map(|(b, c)| vesselid::Detection::new(*b, *c as f64 / 10.0))
            .collect();
        let mut last_fp = usize::MAX;
        for t in 0..=10 {
            let cfg = MatchConfig::new(0.5, t as f64 / 10.0).unwrap();
            let m = match_detections(&preds, &gts, &cfg);
            let claimed: BTreeSet<usize> = m.true_positives.iter().map(|p| p.1).collect();
            let used: BTreeSet<usize> = m.true_positives.iter().map(|p| p.0).collect();
            if claimed.len() != m.tp() || used.len() != m.tp() {
                return Err(format!("case {case}: a box was claimed twice"));
            }
            if m.tp() + m.fn_count() != gts.len() {
                return Err(format!("case {case}: tp + fn != |gt|"));
            }
            let eligible = preds.iter().filter(|p| p.confidence >= cfg.confidence_threshold).count();
            if m.tp() + m.fp() != eligible {
                return Err(format!("case {case}: tp + fp != eligible predictions"));
            }
            if m.fp() > last_fp {
                return Err(format!("case {case}: FP rose with the confidence threshold"));
            }
            last_fp = m.fp();
            let (p, r) = (m.precision::<f64>(), m.recall::<f64>());
            if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&r) {
                return Err(format!("case {case}: precision/recall out of range"));
            }
        }
        let ap = average_precision_11pt(&preds, &gts, 0.5);
        if !(0.0..=1.0).contains(&ap) {
            return Err(format!("case {case}: AP {ap} out of range"));
        }
    }
    Ok("1000 instances x 11 thresholds".into())
}

// ------------------------------------------------------------ split safety

fn split_index(rng: &mut ChaCha8Rng, per_genus: impl Fn(&mut ChaCha8Rng) -> usize) -> DatasetIndex {
    let mut index = DatasetIndex::default();
    for g in GenusCatalog::default().names() {
        for m in 0..per_genus(rng) {
            let slide = format!("{g}-{m}");
            index
                .add_slide(SlideMeta::new(&slide, format!("mac-{g}-{m}"), Some(g.clone()), 10_000, 10_000))
                .unwrap();
            let n = rng.random_range(50..=150);
            let anns = (0..n)
                .map(|k| Annotation::human(format!("{slide}-a{k}"), &slide, BBox::from_xywh(k * 10, 0, 8, 8), Some(g.clone())))
                .collect();
            index.add_annotations(anns).unwrap();
        }
    }
    index
}

fn genus_shares(index: &DatasetIndex, slides: &[&str]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for s in slides {
        for a in index.training_annotations(s) {
            *counts.entry(a.genus.clone().unwrap()).or_default() += 1.0;
            total += 1.0;
        }
    }
    counts.values_mut().for_each(|v| *v /= total);
    counts
}

fn split_safety() -> Outcome {
    let (mut worst, mut worst_pair): (f64, f64) = (0.0, 0.0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let index = split_index(&mut rng, |r| r.random_range(3..=10));
        let s = split(&index, SplitRatios::default(), seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let parts: Vec<BTreeSet<String>> = Partition::ALL
            .iter()
            .map(|&p| {
                s.slides_in(&index, p)
                    .iter()
                    .map(|sl| index.slide(sl).unwrap().maceration_id.clone())
                    .collect()
            })
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                if !parts[i].is_disjoint(&parts[j]) {
                    return Err(format!("seed {seed}: maceration in two partitions"));
                }
            }
        }
        let train_slides = s.slides_in(&index, Partition::Train);
        let val_slides = s.slides_in(&index, Partition::Val);
        check_leakage(
            parts[0].iter().map(String::as_str),
            parts[1].iter().chain(&parts[2]).map(String::as_str),
        )
        .map_err(|e| format!("seed {seed}: {e}"))?;
        let all: Vec<&str> = index.slides.iter().map(|s| s.slide_id.as_str()).collect();
        let global = genus_shares(&index, &all);
        let train = genus_shares(&index, &train_slides);
        let val = genus_shares(&index, &val_slides);
        let macs = index.macerations();
        for g in global.keys() {
            let n_macs = macs.keys().filter(|m| m.starts_with(&format!("mac-{g}-"))).count();
            if n_macs < 4 {
                continue;
            }
            let (t, v, a) = (train[g], val[g], global[g]);
            // each partition's genus share against the global share
            let d = (t - a).abs().max((v - a).abs());
            worst = worst.max(d);
            worst_pair = worst_pair.max((t - v).abs());
            if d > 0.05 {
                return Err(format!("seed {seed}: {g} train {t:.4} val {v:.4} global {a:.4}"));
            }
        }
    }
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let index = split_index(&mut rng, |_| 3);
        let s = split(&index, SplitRatios::default(), seed).map_err(|e| e.to_string())?;
        for g in GenusCatalog::default().names() {
            for p in Partition::ALL {
                let n = s.macerations_in(p).iter().filter(|m| m.starts_with(&format!("mac-{g}-"))).count();
                if n != 1 {
                    return Err(format!("seed {seed}: {g} has {n} macerations in {p}"));
                }
            }
        }
    }
    Ok(format!(
        "200 splits leak-free; 3-maceration genera 1/1/1; max share deviation from global {:.2} pp (train vs val {:.2} pp)",
        worst * 100.0,
        worst_pair * 100.0
    ))
}

// ------------------------------------------------------- mosaic provenance

fn textured(w: u32, h: u32, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w as usize * h as usize * 3).map(|_| rng.random()).collect();
    Raster::from_raw(w, h, 3, data).unwrap()
}

/// The part of a cover-scaled source that lands in quadrant `k`, computed
/// by resizing the whole source and cropping at the far edges.
fn expected_quadrant(src: &Raster, k: usize, qw: u32, qh: u32) -> Raster {
    let (w, h) = src.dims();
    let scale = (qw as f64 / w as f64).max(qh as f64 / h as f64);
    let (rw, rh) = ((w as f64 * scale).round() as u32, (h as f64 * scale).round() as u32);
    let scaled = if (rw, rh) == (w, h) { src.clone() } else { src.resize_area(rw, rh) };
    let x0 = if k.is_multiple_of(2) { rw - qw } else { 0 };
    let y0 = if k < 2 { rh - qh } else { 0 };
    scaled.crop(&BBox::from_xywh(x0 as i64, y0 as i64, qw as i64, qh as i64)).unwrap()
}

fn mosaic_provenance() -> Outcome {
    // zero jitter: quadrants are the scaled sources, bit for bit
    let size_sets: [[(u32, u32); 4]; 3] = [
        [(640, 640); 4],
        [(1280, 1280), (320, 320), (1280, 640), (640, 1280)],
        [(960, 640), (640, 320), (640, 960), (1280, 1280)],
    ];
    for (si, sizes) in size_sets.iter().enumerate() {
        let samples: Vec<Sample> = sizes
            .iter()
            .enumerate()
            .map(|(k, &(w, h))| Sample { image: textured(w, h, (si * 4 + k) as u64), boxes: vec![] })
            .collect();
        let out = mosaic(&samples, &MosaicConfig::new(1280, 0, 0)).map_err(|e| e.to_string())?;
        for k in 0..4 {
            let q = BBox::from_xywh(if k % 2 == 0 { 0 } else { 640 }, if k < 2 { 0 } else { 640 }, 640, 640);
            let got = out.image.crop(&q).unwrap();
            if got != expected_quadrant(&samples[k].image, k, 640, 640) {
                return Err(format!("size set {si}: quadrant {k} differs from its scaled source"));
            }
        }
    }

    // marker pixels painted into boxes must end up inside the remapped boxes
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED + case);
        let mut samples = Vec::new();
        for k in 0..4u8 {
            let (w, h) = (rng.random_range(200..900), rng.random_range(200..900));
            let mut img = Raster::filled(w, h, 3, 0);
            for y in 0..h {
                for x in 0..w {
                    img.set(x, y, 1, 40 + k * 50);
                }
            }
            let mut boxes = Vec::new();
            for _ in 0..rng.random_range(1..4) {
                let bw = rng.random_range(16..(w / 3) as i64);
                let bh = rng.random_range(16..(h / 3) as i64);
                let b = BBox::from_xywh(rng.random_range(0..w as i64 - bw), rng.random_range(0..h as i64 - bh), bw, bh);
                for y in b.y_min..b.y_max {
                    for x in b.x_min..b.x_max {
                        img.set(x as u32, y as u32, 0, 255);
                    }
                }
                boxes.push(LabeledBox::new(b, Some(&format!("src{k}"))));
            }
            samples.push(Sample { image: img, boxes });
        }
        let cfg = MosaicConfig { min_keep: 0.0, ..MosaicConfig::new(1024, 200, case) };
        let layout = mosaic_layout([0, 1, 2, 3].map(|k| samples[k].image.dims()), &cfg).map_err(|e| e.to_string())?;
        let out = mosaic(&samples, &cfg).map_err(|e| e.to_string())?;
        let canvas = out.image.bounds();
        for b in &out.boxes {
            if !canvas.contains(&b.bbox) {
                return Err(format!("case {case}: box {} leaves the canvas", b.bbox));
            }
        }
        for (k, m) in layout.iter().enumerate() {
            let label = format!("src{k}");
            let mine: Vec<BBox> = out
                .boxes
                .iter()
                .filter(|b| b.label.as_deref() == Some(label.as_str()))
                .map(|b| b.bbox)
                .collect();
            if let Some(b) = mine.iter().find(|b| !m.quadrant.contains(b)) {
                return Err(format!("case {case}: box {b} crosses its quadrant"));
            }
            let q = m.quadrant;
            for y in q.y_min..q.y_max {
                for x in q.x_min..q.x_max {
                    if out.image.get(x as u32, y as u32, 0) > 0 && !mine.iter().any(|b| b.contains_pixel(x, y)) {
                        return Err(format!("case {case}: marker pixel ({x}, {y}) outside every box"));
                    }
                }
            }
            for b in mine.iter().filter(|b| b.width() >= 3 && b.height() >= 3) {
                let hit = (b.y_min..b.y_max)
                    .any(|y| (b.x_min..b.x_max).any(|x| out.image.get(x as u32, y as u32, 0) > 0));
                if !hit {
                    return Err(format!("case {case}: box {b} holds no marker pixel"));
                }
            }
        }
    }
    Ok("3 zero-jitter layouts bit-exact; 100 marker cases consistent".into())
}

// ------------------------------------------------------ tiling equivalence

fn tiling_equivalence() -> Outcome {
    let mut spec = SynthSpec::new("tile", "m", 6400, 6400, 11);
    spec.planes = 1;
    spec.channels = 1;
    spec.blur_per_plane = vec![0.0];
    spec.genus_mix = GenusCatalog::default().names().iter().map(|g| (g.clone(), 1.0 / 9.0)).collect();
    spec.element_count = 300;
    spec.fiber_count = 20;
    spec.max_pair_iou = 0.0;
    spec.min_separation_px = 4;
    let profiles: Vec<_> = default_profiles().iter().map(|p| p.scaled(0.15)).collect();
    let scene = Scene::new(&spec, &profiles).map_err(|e| e.to_string())?;
    let widest = scene
        .ground_truth()
        .iter()
        .map(|a| a.bbox)
        .chain(scene.fiber_boxes())
        .map(|b| b.long_side())
        .max()
        .unwrap_or(0);
    if widest >= 256 {
        return Err(format!("fixture object of {widest} px is not below the overlap"));
    }
    let img = scene.render_plane(0).map_err(|e| e.to_string())?;
    let params = BaselineDetectorParams::default();
    let t = resolve_threshold(&img, params.threshold);
    let mut whole = detect_baseline(&img, &BaselineDetectorParams { threshold: ThresholdMode::Fixed(t), ..params })
        .map_err(|e| e.to_string())?;
    let mut tiled = detect_tiled(&img, &params, 2560, 256).map_err(|e| e.to_string())?;
    let key = |d: &vesselid::Detection| (d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max);
    whole.sort_by_key(key);
    tiled.sort_by_key(key);
    check(
        whole == tiled && !whole.is_empty(),
        format!("{} boxes untiled, {} tiled+stitched, largest object {widest} px", whole.len(), tiled.len()),
    )
}

// -------------------------------------------------------------- end to end

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let catalog = GenusCatalog::default();
    let cfg = ClassifyConfig::default();
    let classifier = train_desk_classifier(&dir.path().join("train"), &catalog, &cfg, 7, 1);
    let out = run_desk_e2e(&dir.path().join("test"), &catalog, &classifier, &cfg, 7, 20);
    let t = start.elapsed();
    check(
        out.recall >= 0.9 && out.macro_f1 >= 0.9 && out.presence_errors.is_empty() && t < Duration::from_secs(300),
        format!(
            "recall {:.4}, macro F1 {:.4}, presence errors {:?}, {:.1} s",
            out.recall,
            out.macro_f1,
            out.presence_errors,
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------- fusion ordering

/// Macro F1 of crop classification on ground-truth boxes.
fn fusion_f1(
    train: &[(SlideContainer, Vec<Annotation>)],
    test: &[(SlideContainer, Vec<Annotation>)],
    catalog: &GenusCatalog,
    cfg: &ClassifyConfig,
) -> Result<f64, String> {
    let refs: Vec<(&SlideContainer, &[Annotation])> = train.iter().map(|(c, a)| (c, a.as_slice())).collect();
    let clf = train_classifier(&refs, catalog, cfg).map_err(|e| e.to_string())?;
    let mut cm = ConfusionMatrix::for_catalog(catalog);
    for (slide, gt) in test {
        for a in gt {
            let p = classify_box(slide, &a.bbox, &clf, cfg).map_err(|e| e.to_string())?;
            cm.add(catalog.class_index(a.genus.as_deref().unwrap()).unwrap(), p.argmax().unwrap());
        }
    }
    Ok(cm.macro_f1())
}

fn fusion_ordering() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let catalog = GenusCatalog::default();
    let profiles = desk_profiles();
    let noisy = |id: &str, seed: u64| {
        let mix: Vec<(&str, f64)> = catalog.names().iter().map(|g| (g.as_str(), 1.0 / 9.0)).collect();
        let mut s = desk_spec(id, &format!("m-{id}"), seed, &mix, 45);
        s.width = 1600;
        s.height = 1600;
        s.plane_noise = 30.0;
        s.blur_per_plane = vec![1.5, 1.0, 0.5, 1.0, 1.5];
        s
    };
    let make = |prefix: &str, n: usize, base: u64| {
        (0..n)
            .map(|k| {
                let id = format!("{prefix}{k}");
                generate(&dir.path().join(&id), &noisy(&id, base + k as u64), &profiles, DESK_TILE).unwrap()
            })
            .collect::<Vec<_>>()
    };
    let train = make("ftrain", 2, 500);
    let test = make("ftest", 3, 900);
    let base = ClassifyConfig::default();
    let average = fusion_f1(&train, &test, &catalog, &base)?;
    let maximum = fusion_f1(&train, &test, &catalog, &ClassifyConfig { fusion: FusionMode::Maximum, ..base.clone() })?;
    let middle = fusion_f1(&train, &test, &catalog, &ClassifyConfig { planes: PlaneMode::Single(3), ..base })?;
    check(
        average >= middle - 0.01 && (average - maximum).abs() <= 0.02,
        format!("macro F1 average {average:.4}, maximum {maximum:.4}, middle plane {middle:.4}"),
    )
}

// --------------------------------------------------------- memory contract

fn memory_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = SynthSpec::new("big", "m", 16384, 16384, 5);
    spec.channels = 1;
    spec.blur_per_plane = vec![0.0; 5];
    spec.plane_noise = 0.0;
    spec.genus_mix = [("Hevea".to_string(), 0.5), ("Fagus".to_string(), 0.5)].into();
    spec.element_count = 400;
    spec.fiber_count = 40;
    let profiles: Vec<_> = default_profiles().iter().map(|p| p.scaled(0.3)).collect();
    let scene = Scene::new(&spec, &profiles).map_err(|e| e.to_string())?;
    let slide = SlideContainer::ingest_source(&dir.path().join("big"), &scene, spec.slide_meta(), 512)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rects: Vec<(u32, BBox)> = vec![(2, BBox::from_xywh(1000, 1000, 6000, 6000))];
    for _ in 0..12 {
        let w = rng.random_range(1..3000);
        let h = rng.random_range(1..3000);
        rects.push((rng.random_range(0..5), BBox::from_xywh(rng.random_range(0..16384 - w), rng.random_range(0..16384 - h), w, h)));
    }
    slide.meter().reset_peak();
    let mut tiles = 0;
    for (plane, rect) in &rects {
        let req = RegionRequest { plane: *plane, level: 0, rect: *rect };
        let (budgeted, stats) = slide.read_region_with_stats(&req, DEFAULT_READ_BUDGET).map_err(|e| e.to_string())?;
        tiles += stats.tiles_read;
        if stats.peak_resident > DEFAULT_READ_BUDGET {
            return Err(format!("read of {rect} held {} tiles", stats.peak_resident));
        }
        let unbudgeted = slide.read_region(&req, usize::MAX).map_err(|e| e.to_string())?;
        let source = scene.render(*plane, rect).map_err(|e| e.to_string())?;
        if budgeted != unbudgeted || budgeted != source {
            return Err(format!("read of {rect} on plane {plane} is not bit-exact"));
        }
    }
    let peak = slide.meter().peak();
    check(
        peak <= DEFAULT_READ_BUDGET,
        format!("{} reads, {tiles} tiles decoded, peak resident {peak} <= {DEFAULT_READ_BUDGET}", rects.len()),
    )
}

// ------------------------------------------------------- normalize contract

fn normalize_contract() -> Outcome {
    let cfg = NormalizeConfig { grayscale: false, ..NormalizeConfig::default() };
    let paper = normalize_crop(&Raster::new(1241, 766, 1), &cfg).map_err(|e| e.to_string())?;
    if paper.content != BBox::new(0, 153, 800, 647).unwrap() || paper.raster.dims() != (800, 800) {
        return Err(format!("1241x766 maps to content {}", paper.content));
    }
    let mut runner = TestRunner::new(PropConfig { cases: 256, failure_persistence: None, ..PropConfig::default() });
    let strategy = (1u32..1600, 1u32..1600, any::<u64>(), prop_oneof![Just(NormalizeMode::Pad), Just(NormalizeMode::DistortResize)]);
    runner
        .run(&strategy, |(w, h, seed, mode)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..w as usize * h as usize).map(|_| rng.random()).collect();
            let crop = Raster::from_raw(w, h, 1, data).unwrap();
            let out = normalize_crop(&crop, &NormalizeConfig { mode, ..cfg }).unwrap();
            prop_assert_eq!(out.raster.dims(), (800, 800));
            if mode == NormalizeMode::Pad {
                let long = w.max(h);
                let expect_long = if long > 800 { 800 } else { long };
                prop_assert_eq!(out.content.width().max(out.content.height()) as u32, expect_long);
                if w <= 800 && h <= 800 {
                    prop_assert_eq!(out.raster.crop(&out.content).unwrap(), crop);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("256 random crops: always 800x800, small crops bit-exact, 1241x766 -> 800x494".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("table1_f2_reproduction", table1_f2),
        ("ap_oracle_equivalence", ap_oracle_equivalence),
        ("matching_properties", matching_properties),
        ("split_safety", split_safety),
        ("mosaic_provenance", mosaic_provenance),
        ("tiling_equivalence", tiling_equivalence),
        ("end_to_end_synthetic", end_to_end),
        ("fusion_ordering", fusion_ordering),
        ("memory_contract", memory_contract),
        ("normalize_contract", normalize_contract),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let line = match &result {
            Ok(d) => format!("PASS {name} ({secs:.1} s): {d}"),
            Err(d) => {
                failed += 1;
                format!("FAIL {name} ({secs:.1} s): {d}")
            }
        };
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        writeln!(out, "{failed} acceptance criteria failed").unwrap();
        std::process::exit(1);
    }
}
