use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use vesselid::dataset::{DatasetStore, Decision, ReviewDecision};
use vesselid::{Raster, Review, Source};

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        let run = Self { dir: tempfile::tempdir().unwrap() };
        let config = json!({
            "dataset": run.path("dataset"),
            "detect": {
                "working_long_side": 450,
                "tile_size": 256,
                "overlap": 64,
                "detector": {"threshold": {"mode": "fixed", "value": 40}}
            },
            "classify": {"normalize": {"target": 200}}
        });
        std::fs::write(run.path("config.json"), config.to_string()).unwrap();
        run
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn out(&self, p: &str) -> PathBuf {
        self.path("out").join(p)
    }

    /// Runs the binary with the shared config unless `args` brings its own.
    fn cmd(&self, args: &[&str]) -> Output {
        let mut c = Command::new(env!("CARGO_BIN_EXE_vesselid"));
        if args.first() != Some(&"--config") {
            c.arg("--config").arg(self.path("config.json"));
        }
        c.arg("--out")
            .arg(self.path("out"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.cmd(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    /// The machine-readable error line of a failing run.
    fn err(&self, args: &[&str]) -> String {
        let o = self.cmd(args);
        assert!(!o.status.success(), "{args:?} should fail");
        let stderr = String::from_utf8(o.stderr).unwrap();
        let line = stderr.lines().find(|l| l.starts_with("error: code=")).unwrap_or_else(|| panic!("{stderr}"));
        line.to_string()
    }

    fn synth(&self, id: &str, mac: &str, mix: &str, count: usize, seed: u64, extra: &[&str]) {
        let count = count.to_string();
        let seed = seed.to_string();
        let mut args = vec![
            "synth", "--slide-id", id, "--maceration", mac, "--mix", mix, "--count", &count, "--width", "900",
            "--height", "700", "--tile-size", "256", "--seed", &seed, "--separation", "8",
        ];
        args.extend_from_slice(extra);
        self.ok(&args);
    }

    fn json(&self, p: &Path) -> Value {
        serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
    }
}

/// Two genera, three macerations each.
fn six_slides(run: &Run) {
    for k in 0..3 {
        run.synth(&format!("f{k}"), &format!("mf{k}"), "Fagus=1", 8, 10 + k, &[]);
        run.synth(&format!("h{k}"), &format!("mh{k}"), "Hevea=1", 6, 20 + k, &[]);
    }
}

#[test]
fn full_pipeline() {
    let run = Run::new();
    six_slides(&run);
    let out = run.ok(&["split", "--seed", "3"]);
    assert!(out.contains("train"), "{out}");
    let split = run.json(&run.out("split.json"));
    for p in ["train", "val", "test"] {
        assert_eq!(split[p].as_array().unwrap().len(), 2, "{split}");
    }
    let split_path = run.out("split.json");
    let split_arg = split_path.to_str().unwrap();

    run.ok(&["detect"]);
    let first: Vec<String> = ["f0", "h2"]
        .iter()
        .map(|s| std::fs::read_to_string(run.out(&format!("detections/{s}.txt"))).unwrap())
        .collect();
    assert!(first[0].starts_with("# slide=f0 long_side=900\n"));
    assert!(first[0].lines().count() >= 8);
    run.ok(&["detect"]);
    for (s, before) in ["f0", "h2"].iter().zip(&first) {
        assert_eq!(&std::fs::read_to_string(run.out(&format!("detections/{s}.txt"))).unwrap(), before);
    }

    let out = run.ok(&["classify", "--split", split_arg]);
    assert!(out.contains("fusion: Average"), "{out}");
    assert!(run.out("model.json").exists());

    let out = run.ok(&["evaluate", "--split", split_arg, "--merge"]);
    assert!(out.contains("macro F1"), "{out}");
    let eval = run.json(&run.out("evaluation.json"));
    assert!(eval["detection_ap"]["micro"].as_f64().unwrap() >= 0.9, "{eval}");
    assert!(eval["macro_f1"].as_f64().unwrap() >= 0.9, "{eval}");
    assert_eq!(eval["merged_confusion"]["labels"].as_array().unwrap().len(), 6);
    let header = std::fs::read_to_string(run.out("per_genus.csv")).unwrap();
    assert!(header.starts_with("genus,precision,recall,f2"));
    assert!(run.out("confusion.csv").exists() && run.out("merged_confusion.csv").exists());

    let manifest = run.json(&run.out("manifests/evaluate.json"));
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config_sha256"], run.json(&run.out("manifests/detect.json"))["config_sha256"]);

    // the classifier saw the train macerations, which evaluation refuses
    let line = run.err(&["evaluate", "--split", split_arg, "--partition", "train"]);
    assert!(line.starts_with("error: code=leakage message="), "{line}");

    run.ok(&["report"]);
    let stats = std::fs::read_to_string(run.out("dataset_stats.csv")).unwrap();
    assert!(stats.contains("Fagus,3,24") && stats.contains("Hevea,3,18"), "{stats}");
    assert!(run.out("presence.csv").exists());

    run.ok(&["augment", "--split", split_arg, "--count", "2", "--long-side", "400"]);
    assert!(run.out("augment/aug-0001.png").exists());
    let boxes = std::fs::read_to_string(run.out("augment/aug-0000.txt")).unwrap();
    assert!(boxes.lines().all(|l| l.split_whitespace().count() == 5));
}

#[test]
fn error_lines() {
    let run = Run::new();
    run.synth("a", "ma", "Fagus=1", 4, 1, &[]);
    run.synth("b", "mb", "Fagus=1", 4, 2, &[]);

    let line = run.err(&["detect", "--slides", "nope"]);
    assert!(line.starts_with("error: code=unknown_slide message="), "{line}");
    let line = run.err(&["classify", "--slides", "a"]);
    assert!(line.contains("code=invalid") && line.contains("run detect first"), "{line}");
    let line = run.err(&["synth", "--slide-id", "a", "--mix", "Fagus=1"]);
    assert!(line.contains("already indexed"), "{line}");
    let line = run.err(&["synth", "--slide-id", "q", "--mix", "Quercus=1"]);
    assert!(line.starts_with("error: code=unknown_genus"), "{line}");

    // predictions stored under b but made for a
    let catalog = vesselid::GenusCatalog::default();
    let sc = vesselid::pipeline::SlideClassification {
        slide_id: "a".into(),
        detections: vec![],
        report: vesselid::scorers::slide_report("a", &catalog, &[], &Default::default()).unwrap(),
    };
    std::fs::create_dir_all(run.out("classifications")).unwrap();
    std::fs::write(run.out("classifications/b.json"), serde_json::to_string(&sc).unwrap()).unwrap();
    let line = run.err(&["evaluate", "--slides", "b"]);
    assert!(line.contains("code=invalid") && line.contains("expected `b`"), "{line}");

    // a bound external detector without output for the slide
    std::fs::write(
        run.path("external.json"),
        json!({"dataset": run.path("dataset"), "scorers": {"detector": {"kind": "external_file", "path": run.path("ext")}}})
            .to_string(),
    )
    .unwrap();
    let line = run.err(&["--config", run.path("external.json").to_str().unwrap(), "detect"]);
    assert!(line.contains("scorer"), "{line}");
    std::fs::create_dir_all(run.path("ext")).unwrap();
    let line = run.err(&["--config", run.path("external.json").to_str().unwrap(), "detect"]);
    assert!(line.contains("missing scorer output"), "{line}");

    std::fs::write(run.path("bad.json"), r#"{"detect": {"tile_size": "big"}}"#).unwrap();
    let line = run.err(&["--config", run.path("bad.json").to_str().unwrap(), "report"]);
    assert!(line.starts_with("error: code=parse"), "{line}");
}

#[test]
fn external_detections_are_rescaled() {
    let run = Run::new();
    run.synth("a", "ma", "Fagus=1", 0, 1, &[]);
    std::fs::create_dir_all(run.path("ext")).unwrap();
    std::fs::write(run.path("ext/a.txt"), "# slide=a long_side=90\n1 2 11 12 0.8\n").unwrap();
    std::fs::write(
        run.path("external.json"),
        json!({"dataset": run.path("dataset"), "scorers": {"detector": {"kind": "external_file", "path": run.path("ext")}}})
            .to_string(),
    )
    .unwrap();
    run.ok(&["--config", run.path("external.json").to_str().unwrap(), "detect"]);
    let text = std::fs::read_to_string(run.out("detections/a.txt")).unwrap();
    assert_eq!(text, "# slide=a long_side=900\n10 20 110 120 0.8\n");
}

#[test]
fn ingest_png_planes() {
    let run = Run::new();
    for (i, v) in [200u8, 120].iter().enumerate() {
        let r = Raster::from_fn(300, 200, 1, |x, y, _| if x < 150 && y < 100 { *v } else { 230 });
        r.save_png(&run.path(&format!("p{i}.png"))).unwrap();
    }
    std::fs::write(run.path("a.txt"), "a-h-00000, 10 10 50 40, Fagus, -, human, accepted, 1\n").unwrap();
    let out = run.ok(&[
        "ingest", "--slide-id", "s", "--maceration", "m", "--genus", "Fagus",
        "--plane", run.path("p0.png").to_str().unwrap(),
        "--plane", run.path("p1.png").to_str().unwrap(),
        "--tile-size", "64",
        "--annotations", run.path("a.txt").to_str().unwrap(),
    ]);
    assert!(out.contains("2 planes"), "{out}");
    let index = DatasetStore::open(&run.path("dataset")).unwrap().load().unwrap();
    assert_eq!(index.slide("s").unwrap().plane_count, 2);
    assert_eq!(index.annotations_for("s").len(), 1);
    let tile = std::fs::read(run.path("dataset/slides/s/p1/l0/t0_0.png")).unwrap();
    assert_eq!(Raster::decode_png(&tile).unwrap().get(0, 0, 0), 120);
}

#[test]
fn review_loop_rounds() {
    let run = Run::new();
    // truth held out: the index starts without annotations
    run.synth("s", "m", "Betula=1", 10, 7, &["--hold-out"]);
    run.synth("blank", "mb", "Betula=1", 0, 8, &[]);

    let out = run.ok(&["loop", "--slides", "blank"]);
    assert!(out.contains("no pending predictions"), "{out}");
    assert!(!run.out("loop_log.json").exists());

    run.ok(&["loop", "--slides", "s", "--timestamp", "5"]);
    let log = run.json(&run.out("loop_log.json"));
    let proposed = log["new_predictions"].as_u64().unwrap() as usize;
    assert!(proposed >= 8, "{log}");
    assert_eq!(log["pending"].as_u64().unwrap() as usize, proposed);

    // the expert accepts everything that matches the held-out truth
    let store = DatasetStore::open(&run.path("dataset")).unwrap();
    let index = store.load().unwrap();
    let truth = vesselid::dataset::parse_annotation_file(
        &std::fs::read_to_string(run.out("truth/s.txt")).unwrap(),
        "s",
        "truth",
    )
    .unwrap();
    let decisions: Vec<ReviewDecision> = index
        .annotations_for("s")
        .iter()
        .map(|a| {
            let hit = truth.iter().any(|t| vesselid::metrics::iou::<f64>(&t.bbox, &a.bbox) > 0.5);
            ReviewDecision {
                annotation_id: a.annotation_id.clone(),
                expected_version: Some(a.version),
                decision: if hit { Decision::Accept } else { Decision::Reject },
            }
        })
        .collect();
    std::fs::write(run.path("decisions.json"), serde_json::to_string(&decisions).unwrap()).unwrap();
    run.ok(&["loop", "--slides", "s", "--decisions", run.path("decisions.json").to_str().unwrap(), "--timestamp", "6"]);

    let log = run.json(&run.out("loop_log.json"));
    assert_eq!(log["new_predictions"], 0);
    assert_eq!(log["pending"], 0);
    assert!(log["accepted_after"].as_u64().unwrap() >= 8, "{log}");
    assert!(log["recall_after"].as_f64().unwrap() >= log["recall_before"].as_f64().unwrap(), "{log}");
    assert!(run.out("detector.json").exists());
    let index = store.load().unwrap();
    assert!(index
        .annotations_for("s")
        .iter()
        .all(|a| a.version == 2 && (a.review == Review::Rejected || a.source == Source::Corrected)));
    assert_eq!(index.audit.len(), decisions.len());
    assert!(index.audit.iter().all(|r| r.timestamp == 6 && r.reviewer == "cli"));

    // replaying the same decisions is a version conflict and changes nothing
    let line = run.err(&["loop", "--slides", "s", "--decisions", run.path("decisions.json").to_str().unwrap()]);
    assert!(line.starts_with("error: code=version_conflict"), "{line}");
    assert_eq!(store.load().unwrap(), index);
}
