use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use vesselid::augment::{LabeledBox, Sample};
use vesselid::dataset::{
    self, format_annotation_file, merge_review, parse_annotation_file, write_atomic, DatasetIndex, DatasetStore,
    Partition, ReviewDecision, SplitAssignment, SplitRatios,
};
use vesselid::metrics::match_detections;
use vesselid::metrics::report::{confusion_csv, confusion_text, genus_table_csv, genus_table_text, text_table};
use vesselid::pipeline::{
    self as pl, default_merge_groups, detect_slide, new_predictions, refit_detector, train_classifier,
    working_view, ClassifiedDetection, DetectConfig, EvalSlide, SlideClassification,
};
use vesselid::scorers::{
    parse_classification_file, parse_detection_file, slide_report, write_classification_file, write_detection_file,
    BaselineDetectorParams, CentroidClassifier, Detection, FusionMode, ScorerBinding,
};
use vesselid::slide_store::{SlideContainer, DEFAULT_TILE_SIZE};
use vesselid::synth::{generate, SynthConfig, SynthSpec};
use vesselid::{Annotation, BBox, Error, GenusCatalog, Raster, Result, Review, SlideMeta, Source};

use crate::config::{write_manifest, RunConfig};

pub struct Ctx {
    cfg: RunConfig,
    seed: Option<u64>,
    out: PathBuf,
    catalog: GenusCatalog,
}

impl Ctx {
    pub fn new(config: Option<&Path>, seed: Option<u64>, out: PathBuf, dataset: Option<PathBuf>) -> Result<Self> {
        let mut cfg = RunConfig::load(config)?;
        if let Some(d) = dataset {
            cfg.dataset = d;
        }
        let catalog = cfg.catalog()?;
        Ok(Self { cfg, seed, out, catalog })
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn store(&self) -> Result<DatasetStore> {
        DatasetStore::open(&self.cfg.dataset)
    }

    fn out_dir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn manifest(&self, command: &str, seed: u64) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        write_manifest(&self.out, command, seed, &self.cfg)
    }

    fn container(&self, store: &DatasetStore, slide_id: &str) -> Result<SlideContainer> {
        let dir = store.slides_dir().join(slide_id);
        if !dir.join("meta.json").exists() {
            return Err(Error::Invalid(format!("slide `{slide_id}` has no stored container")));
        }
        SlideContainer::open(&dir)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    write_atomic(path, contents.as_ref())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PartitionArg {
    Train,
    Val,
    Test,
}

impl From<PartitionArg> for Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Train => Partition::Train,
            PartitionArg::Val => Partition::Val,
            PartitionArg::Test => Partition::Test,
        }
    }
}

/// Which slides a command works on: an explicit list, one partition of a
/// split (test by default), or every indexed slide.
#[derive(Args, Clone, Default)]
pub struct Selection {
    /// Comma-separated slide ids.
    #[arg(long, value_delimiter = ',')]
    slides: Vec<String>,
    /// Split file written by `split`.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum)]
    partition: Option<PartitionArg>,
}

impl Selection {
    fn split(&self) -> Result<Option<SplitAssignment>> {
        self.split.as_deref().map(SplitAssignment::load).transpose()
    }

    fn resolve(&self, index: &DatasetIndex) -> Result<Vec<String>> {
        if !self.slides.is_empty() {
            for s in &self.slides {
                index.slide(s)?;
            }
            return Ok(self.slides.clone());
        }
        if let Some(split) = self.split()? {
            let p = self.partition.map(Partition::from).unwrap_or(Partition::Test);
            return Ok(split.slides_in(index, p).into_iter().map(str::to_string).collect());
        }
        Ok(index.slides.iter().map(|s| s.slide_id.clone()).collect())
    }
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    slide_id: String,
    #[arg(long)]
    maceration: String,
    /// Genus of a mono-genus slide.
    #[arg(long)]
    genus: Option<String>,
    /// Focal-plane PNG images, in plane order; repeat once per plane.
    #[arg(long = "plane", required = true)]
    planes: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    tile_size: u32,
    /// Existing annotation file for the slide.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

pub fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let store = ctx.store()?;
    let mut index = store.load()?;
    if index.slide(&a.slide_id).is_ok() {
        return Err(Error::Invalid(format!("slide `{}` is already indexed", a.slide_id)));
    }
    if let Some(g) = &a.genus {
        ctx.catalog.class_index(g)?;
    }
    let planes = a.planes.iter().map(|p| Raster::load_png(p)).collect::<Result<Vec<_>>>()?;
    let (w, h) = planes[0].dims();
    let meta = SlideMeta::new(&a.slide_id, &a.maceration, a.genus.clone(), w as u64, h as u64)
        .with_planes(planes.len() as u32);
    let anns = match &a.annotations {
        Some(p) => parse_annotation_file(&read(p)?, &a.slide_id, &p.display().to_string())?,
        None => Vec::new(),
    };
    let container = SlideContainer::ingest_with_tile_size(&store.slides_dir(), &planes, meta, a.tile_size)?;
    index.add_slide(container.meta().clone())?;
    index.add_annotations(anns)?;
    store.save(&index)?;
    println!(
        "ingested {}: {w}x{h}, {} planes, {} levels",
        a.slide_id,
        container.plane_count(),
        container.level_count()
    );
    ctx.manifest("ingest", ctx.seed())
}

#[derive(Args)]
pub struct SynthArgs {
    /// Synthesis config (JSON with `spec` and optional `profiles`).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    slide_id: Option<String>,
    /// Defaults to `m-<slide id>`.
    #[arg(long)]
    maceration: Option<String>,
    /// `Genus=fraction` pairs, comma-separated.
    #[arg(long, value_delimiter = ',')]
    mix: Vec<String>,
    #[arg(long, default_value_t = 30)]
    count: usize,
    #[arg(long, default_value_t = 2400)]
    width: u32,
    #[arg(long, default_value_t = 1800)]
    height: u32,
    /// Element size relative to full-resolution slides.
    #[arg(long, default_value_t = 0.1)]
    profile_scale: f64,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    tile_size: u32,
    /// Keep element boxes this many pixels apart (no overlap at all).
    #[arg(long)]
    separation: Option<u32>,
    /// Write ground truth to `<out>/truth/` instead of the dataset index.
    #[arg(long)]
    hold_out: bool,
}

fn parse_mix(items: &[String]) -> Result<Vec<(String, f64)>> {
    items
        .iter()
        .map(|item| {
            let (g, f) = item
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("mix entry `{item}` is not Genus=fraction")))?;
            let f: f64 = f.parse().map_err(|_| Error::Invalid(format!("bad fraction in `{item}`")))?;
            Ok((g.to_string(), f))
        })
        .collect()
}

pub fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let config = match &a.spec {
        Some(p) => {
            let mut c: SynthConfig = serde_json::from_str(&read(p)?)?;
            if let Some(s) = ctx.seed {
                c.spec.seed = s;
            }
            c
        }
        None => {
            let id = a
                .slide_id
                .clone()
                .ok_or_else(|| Error::Invalid("synth needs --slide-id or --spec".into()))?;
            let mac = a.maceration.clone().unwrap_or_else(|| format!("m-{id}"));
            let mut spec = SynthSpec::new(&id, &mac, a.width, a.height, ctx.seed());
            spec.genus_mix = parse_mix(&a.mix)?.into_iter().collect();
            spec.element_count = a.count;
            if let Some(px) = a.separation {
                spec.max_pair_iou = 0.0;
                spec.min_separation_px = px;
            }
            SynthConfig { spec, profiles: None, profile_scale: a.profile_scale }
        }
    };
    for g in config.spec.genus_mix.keys() {
        ctx.catalog.class_index(g)?;
    }
    let store = ctx.store()?;
    let mut index = store.load()?;
    if index.slide(&config.spec.slide_id).is_ok() {
        return Err(Error::Invalid(format!("slide `{}` is already indexed", config.spec.slide_id)));
    }
    let (container, truth) = generate(&store.slides_dir(), &config.spec, &config.resolved_profiles(), a.tile_size)?;
    index.add_slide(container.meta().clone())?;
    let id = &config.spec.slide_id;
    if a.hold_out {
        let dir = ctx.out_dir("truth")?;
        write(&dir.join(format!("{id}.txt")), format_annotation_file(&truth))?;
    } else {
        index.add_annotations(truth.clone())?;
    }
    store.save(&index)?;
    println!("synthesized {id}: {} elements", truth.len());
    ctx.manifest("synth", config.spec.seed)
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = SplitRatios::default().train)]
    train: f64,
    #[arg(long, default_value_t = SplitRatios::default().val)]
    val: f64,
    #[arg(long, default_value_t = SplitRatios::default().test)]
    test: f64,
}

pub fn split(ctx: &Ctx, a: SplitArgs) -> Result<()> {
    let index = ctx.store()?.load()?;
    let ratios = SplitRatios { train: a.train, val: a.val, test: a.test };
    let s = dataset::split(&index, ratios, ctx.seed())?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    s.save(&ctx.out.join("split.json"))?;
    let rows: Vec<Vec<String>> = Partition::ALL
        .iter()
        .map(|&p| {
            vec![p.to_string(), s.macerations_in(p).len().to_string(), s.slides_in(&index, p).len().to_string()]
        })
        .collect();
    print!("{}", text_table(&["partition", "macerations", "slides"], &rows));
    ctx.manifest("split", ctx.seed())
}

#[derive(Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    sel: Selection,
    /// Number of images to write.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Long side of the slide views fed to augmentation.
    #[arg(long, default_value_t = 1280)]
    long_side: u32,
}

pub fn augment(ctx: &Ctx, a: AugmentArgs) -> Result<()> {
    let store = ctx.store()?;
    let index = store.load()?;
    let sel = Selection { partition: a.sel.partition.or(Some(PartitionArg::Train)), ..a.sel.clone() };
    let slides = sel.resolve(&index)?;
    let samples = slides
        .par_iter()
        .map(|id| {
            let c = ctx.container(&store, id)?;
            let meta = c.meta();
            let plane = ctx.cfg.detect.plane_for(meta)?;
            let long = (a.long_side as u64).min(meta.long_side()) as u32;
            let image = c.downscaled_view(plane - 1, long)?;
            let f = image.width() as f64 / meta.width_px as f64;
            let boxes = index
                .training_annotations(id)
                .iter()
                .filter_map(|ann| ann.bbox.scale(f).clip(&image.bounds()))
                .map(|b| LabeledBox { bbox: b, label: None })
                .collect();
            Ok(Sample { image, boxes })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::Invalid("no slides selected for augmentation".into()));
    }
    let dir = ctx.out_dir("augment")?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    for k in 0..a.count {
        let picked: Vec<Sample> = (0..4).map(|_| samples[rng.random_range(0..samples.len())].clone()).collect();
        let s = ctx.cfg.augment.detection_sample(&picked, rng.random())?;
        s.image.save_png(&dir.join(format!("aug-{k:04}.png")))?;
        let text: String = s
            .boxes
            .iter()
            .map(|b| format!("{} {}\n", b.bbox, b.label.as_deref().unwrap_or("-")))
            .collect();
        write(&dir.join(format!("aug-{k:04}.txt")), text)?;
    }
    println!("wrote {} augmented images from {} slides", a.count, samples.len());
    ctx.manifest("augment", ctx.seed())
}

/// Detections for one slide in level-0 coordinates from the bound scorer.
fn run_detector(ctx: &Ctx, container: &SlideContainer, cfg: &DetectConfig) -> Result<Vec<Detection>> {
    match &ctx.cfg.scorers.detector {
        None => detect_slide(container, cfg),
        Some(ScorerBinding::BaselineDetector(p)) => detect_slide(container, &DetectConfig { detector: *p, ..cfg.clone() }),
        Some(ScorerBinding::ExternalFile { path }) => {
            let meta = container.meta();
            let file = path.join(format!("{}.txt", meta.slide_id));
            if !file.exists() {
                return Err(Error::Invalid(format!(
                    "missing scorer output {} for slide `{}`",
                    file.display(),
                    meta.slide_id
                )));
            }
            parse_detection_file(&read(&file)?, meta, &file.display().to_string())
        }
        Some(other) => Err(Error::Invalid(format!("{other:?} cannot detect"))),
    }
}

#[derive(Args)]
pub struct DetectArgs {
    #[command(flatten)]
    sel: Selection,
}

pub fn detect(ctx: &Ctx, a: DetectArgs) -> Result<()> {
    let store = ctx.store()?;
    let index = store.load()?;
    let slides = a.sel.resolve(&index)?;
    let dir = ctx.out_dir("detections")?;
    let counts = slides
        .par_iter()
        .map(|id| {
            let c = ctx.container(&store, id)?;
            let dets = run_detector(ctx, &c, &ctx.cfg.detect)?;
            write(&dir.join(format!("{id}.txt")), write_detection_file(id, c.meta().long_side(), &dets))?;
            Ok(dets.len())
        })
        .collect::<Result<Vec<_>>>()?;
    for (id, n) in slides.iter().zip(counts) {
        println!("{id}: {n} detections");
    }
    ctx.manifest("detect", ctx.seed())
}

fn fusion_label(m: FusionMode) -> &'static str {
    match m {
        FusionMode::Average => "Average",
        FusionMode::Maximum => "Maximum",
    }
}

enum Classifier {
    Baseline(CentroidClassifier),
    External(PathBuf),
}

#[derive(Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    sel: Selection,
    /// Trained classifier table; trained on the split's train partition
    /// when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn load_detections(ctx: &Ctx, meta: &SlideMeta) -> Result<Vec<(String, Detection)>> {
    let file = ctx.out.join("detections").join(format!("{}.txt", meta.slide_id));
    if !file.exists() {
        return Err(Error::Invalid(format!("no detections for slide `{}`; run detect first", meta.slide_id)));
    }
    let dets = parse_detection_file(&read(&file)?, meta, &file.display().to_string())?;
    Ok(dets
        .into_iter()
        .enumerate()
        .map(|(k, d)| (format!("{}-d-{k:05}", meta.slide_id), d))
        .collect())
}

fn resolve_classifier(ctx: &Ctx, a: &ClassifyArgs, store: &DatasetStore, index: &DatasetIndex) -> Result<Classifier> {
    if let Some(m) = &a.model {
        return Ok(Classifier::Baseline(CentroidClassifier::load(m)?));
    }
    match &ctx.cfg.scorers.classifier {
        Some(ScorerBinding::BaselineClassifier { table }) => return Ok(Classifier::Baseline(CentroidClassifier::load(table)?)),
        Some(ScorerBinding::ExternalFile { path }) => return Ok(Classifier::External(path.clone())),
        Some(other) => return Err(Error::Invalid(format!("{other:?} cannot classify"))),
        None => {}
    }
    let split = a.sel.split()?.ok_or_else(|| {
        Error::Invalid("no classifier: pass --model, bind a classifier scorer, or give --split to train one".into())
    })?;
    let train_ids = split.slides_in(index, Partition::Train);
    let containers = train_ids.iter().map(|id| ctx.container(store, id)).collect::<Result<Vec<_>>>()?;
    let anns: Vec<Vec<Annotation>> = train_ids
        .iter()
        .map(|id| index.training_annotations(id).into_iter().cloned().collect())
        .collect();
    let pairs: Vec<(&SlideContainer, &[Annotation])> = containers.iter().zip(&anns).map(|(c, a)| (c, a.as_slice())).collect();
    let clf = train_classifier(&pairs, &ctx.catalog, &ctx.cfg.classify)?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    clf.save(&ctx.out.join("model.json"))?;
    println!("trained on {} slides, {} macerations", train_ids.len(), clf.trained_on_macerations().len());
    Ok(Classifier::Baseline(clf))
}

fn classify_external(
    ctx: &Ctx,
    dir: &Path,
    meta: &SlideMeta,
    detections: &[(String, Detection)],
) -> Result<SlideClassification> {
    let file = dir.join(format!("{}.txt", meta.slide_id));
    if !file.exists() {
        return Err(Error::Invalid(format!("missing scorer output {}", file.display())));
    }
    let rows = parse_classification_file(&read(&file)?, &ctx.catalog, &file.display().to_string())?;
    let mut out = Vec::new();
    let mut summary = Vec::new();
    for (id, d) in detections {
        let (_, p) = rows
            .iter()
            .find(|(r, _)| r == id)
            .ok_or_else(|| Error::Invalid(format!("{}: no scores for `{id}`", file.display())))?;
        let class = p.argmax()?;
        summary.push((class, d.confidence));
        out.push(ClassifiedDetection {
            annotation_id: id.clone(),
            bbox: d.bbox,
            confidence: d.confidence,
            genus: ctx.catalog.names()[class].clone(),
            probabilities: p.clone(),
        });
    }
    let report = slide_report(&meta.slide_id, &ctx.catalog, &summary, &ctx.cfg.classify.presence)?;
    Ok(SlideClassification { slide_id: meta.slide_id.clone(), detections: out, report })
}

pub fn classify(ctx: &Ctx, a: ClassifyArgs) -> Result<()> {
    let store = ctx.store()?;
    let index = store.load()?;
    let slides = a.sel.resolve(&index)?;
    let detections = slides
        .iter()
        .map(|id| load_detections(ctx, index.slide(id)?))
        .collect::<Result<Vec<_>>>()?;
    let classifier = resolve_classifier(ctx, &a, &store, &index)?;
    let dir = ctx.out_dir("classifications")?;
    let results = slides
        .par_iter()
        .zip(&detections)
        .map(|(id, dets)| {
            let meta = index.slide(id)?;
            let sc = match &classifier {
                Classifier::Baseline(clf) => {
                    let c = ctx.container(&store, id)?;
                    pl::classify_slide(&c, dets, clf, &ctx.catalog, &ctx.cfg.classify)?
                }
                Classifier::External(path) => classify_external(ctx, path, meta, dets)?,
            };
            write(&dir.join(format!("{id}.json")), serde_json::to_string_pretty(&sc)?)?;
            let rows: Vec<_> = sc.detections.iter().map(|d| (d.annotation_id.clone(), d.probabilities.clone())).collect();
            write(&dir.join(format!("{id}.txt")), write_classification_file(&ctx.catalog, &rows))?;
            Ok(sc)
        })
        .collect::<Result<Vec<_>>>()?;
    println!("fusion: {}", fusion_label(ctx.cfg.classify.fusion));
    for sc in &results {
        println!("{}: {} detections, present: {}", sc.slide_id, sc.detections.len(), sc.report.present_genera().join(" "));
    }
    ctx.manifest("classify", ctx.seed())
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    sel: Selection,
    /// Classifier whose training macerations must not be evaluated;
    /// `<out>/model.json` when present.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of held-out annotation files; accepted index annotations
    /// otherwise.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Add the merged-genus confusion view.
    #[arg(long)]
    merge: bool,
}

pub fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let index = ctx.store()?.load()?;
    let slides = a.sel.resolve(&index)?;

    let mut trained_on = BTreeSet::new();
    let model = a.model.clone().or_else(|| Some(ctx.out.join("model.json")).filter(|p| p.exists()));
    if let Some(m) = &model {
        trained_on.extend(CentroidClassifier::load(m)?.trained_on_macerations().iter().cloned());
    }
    if let Some(split) = a.sel.split()? {
        trained_on.extend(split.macerations_in(Partition::Train).into_iter().map(str::to_string));
    }

    let evaluated: Vec<&str> = slides
        .iter()
        .map(|id| index.slide(id).map(|m| m.maceration_id.as_str()))
        .collect::<Result<_>>()?;
    dataset::check_leakage(trained_on.iter().map(String::as_str), evaluated)?;

    let mut eval = Vec::new();
    for id in &slides {
        let meta = index.slide(id)?;
        let file = ctx.out.join("classifications").join(format!("{id}.json"));
        if !file.exists() {
            return Err(Error::Invalid(format!("no classifications for slide `{id}`; run classify first")));
        }
        let sc: SlideClassification = serde_json::from_str(&read(&file)?)?;
        if sc.slide_id != *id {
            return Err(Error::Invalid(format!(
                "{}: predictions are for slide `{}`, expected `{id}`",
                file.display(),
                sc.slide_id
            )));
        }
        let ground_truth = match &a.truth {
            Some(dir) => {
                let p = dir.join(format!("{id}.txt"));
                parse_annotation_file(&read(&p)?, id, &p.display().to_string())?
            }
            None => index.training_annotations(id).into_iter().cloned().collect(),
        };
        eval.push(EvalSlide { slide: meta.clone(), ground_truth, predictions: sc.detections });
    }

    let mut cfg = ctx.cfg.evaluate.clone();
    if a.merge && cfg.merge_groups.is_empty() {
        cfg.merge_groups = default_merge_groups();
    }
    let gate = (!trained_on.is_empty()).then_some(&trained_on);
    let r = pl::evaluate(&eval, &ctx.catalog, &cfg, gate)?;

    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    write(&ctx.out.join("evaluation.json"), serde_json::to_string_pretty(&r)?)?;
    write(&ctx.out.join("per_genus.csv"), genus_table_csv(&r.per_genus))?;
    write(&ctx.out.join("confusion.csv"), confusion_csv(&r.confusion))?;
    if let Some(m) = &r.merged_confusion {
        write(&ctx.out.join("merged_confusion.csv"), confusion_csv(m))?;
    }

    println!("detection AP (micro): {:.4}", r.detection_ap.micro);
    println!("detection AP (macro): {:.4}", r.detection_ap.macro_);
    println!("genus mAP: {:.4}", r.genus_map);
    println!("macro F1: {:.4}", r.macro_f1);
    println!("accuracy: {:.4}", r.accuracy);
    print!("{}", genus_table_text(&r.per_genus));
    print!("{}", confusion_text(&r.confusion));
    if let (Some(m), Some(f1)) = (&r.merged_confusion, r.merged_macro_f1) {
        println!("merged macro F1 ({} classes): {f1:.4}", m.n());
        print!("{}", confusion_text(m));
    }
    ctx.manifest("evaluate", ctx.seed())
}

#[derive(Args)]
pub struct ReportArgs {}

pub fn report(ctx: &Ctx, _: ReportArgs) -> Result<()> {
    let index = ctx.store()?.load()?;
    let stats = dataset::stats(&index);
    let rows: Vec<Vec<String>> = stats
        .iter()
        .map(|s| vec![s.genus.clone(), s.images.to_string(), s.vessels.to_string()])
        .collect();
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let csv: String = std::iter::once("genus,images,vessels".to_string())
        .chain(rows.iter().map(|r| r.join(",")))
        .map(|l| l + "\n")
        .collect();
    write(&ctx.out.join("dataset_stats.csv"), csv)?;
    print!("{}", text_table(&["genus", "images", "vessels"], &rows));

    let dir = ctx.out.join("classifications");
    if dir.is_dir() {
        let mut presence = Vec::new();
        for s in &index.slides {
            let f = dir.join(format!("{}.json", s.slide_id));
            if f.exists() {
                let sc: SlideClassification = serde_json::from_str(&read(&f)?)?;
                presence.push(vec![sc.slide_id.clone(), sc.report.present_genera().join(" ")]);
            }
        }
        let csv: String = std::iter::once("slide_id,present".to_string())
            .chain(presence.iter().map(|r| r.join(",")))
            .map(|l| l + "\n")
            .collect();
        write(&ctx.out.join("presence.csv"), csv)?;
        print!("{}", text_table(&["slide", "present genera"], &presence));
    }
    ctx.manifest("report", ctx.seed())
}

#[derive(Args)]
pub struct LoopArgs {
    #[command(flatten)]
    sel: Selection,
    /// Review decisions (JSON array) to fold in after predicting.
    #[arg(long)]
    decisions: Option<PathBuf>,
    #[arg(long, default_value = "cli")]
    reviewer: String,
    /// Detections overlapping an existing annotation above this IOU are
    /// not proposed again.
    #[arg(long, default_value_t = 0.5)]
    overlap_iou: f64,
    /// Audit timestamp in Unix seconds; the current time when omitted.
    #[arg(long)]
    timestamp: Option<u64>,
}

#[derive(serde::Serialize)]
struct LoopLog {
    new_predictions: usize,
    decisions_applied: usize,
    pending: usize,
    accepted_before: usize,
    accepted_after: usize,
    rejected: usize,
    detector_before: BaselineDetectorParams,
    detector_after: BaselineDetectorParams,
    /// Recall against accepted boxes, before and after the refit.
    recall_before: f64,
    recall_after: f64,
}

fn accepted_count(index: &DatasetIndex, slides: &[String]) -> usize {
    slides.iter().map(|s| index.training_annotations(s).len()).sum()
}

fn recall(per_slide: &[Vec<Detection>], index: &DatasetIndex, slides: &[String]) -> f64 {
    let (mut tp, mut gt) = (0usize, 0usize);
    for (dets, id) in per_slide.iter().zip(slides) {
        let boxes: Vec<BBox> = index.training_annotations(id).iter().map(|a| a.bbox).collect();
        let m = match_detections(dets, &boxes, &Default::default());
        tp += m.tp();
        gt += boxes.len();
    }
    if gt == 0 {
        0.0
    } else {
        tp as f64 / gt as f64
    }
}

pub fn review_loop(ctx: &Ctx, a: LoopArgs) -> Result<()> {
    let store = ctx.store()?;
    let mut index = store.load()?;
    let slides = a.sel.resolve(&index)?;
    let detector_file = ctx.out.join("detector.json");
    let before: BaselineDetectorParams = if detector_file.exists() {
        serde_json::from_str(&read(&detector_file)?)?
    } else {
        ctx.cfg.detect.detector
    };
    let cfg = DetectConfig { detector: before, ..ctx.cfg.detect.clone() };
    let accepted_before = accepted_count(&index, &slides);

    let detected = slides
        .par_iter()
        .map(|id| {
            let c = ctx.container(&store, id)?;
            let dets = detect_slide(&c, &cfg)?;
            let (_, fx, fy) = working_view(&c, &cfg)?;
            Ok((c, dets, fx, fy))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut proposed = 0;
    for (id, (_, dets, _, _)) in slides.iter().zip(&detected) {
        let new = new_predictions(&index, id, dets, a.overlap_iou)?;
        proposed += new.len();
        index.add_annotations(new)?;
    }
    let decisions: Vec<ReviewDecision> = match &a.decisions {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => Vec::new(),
    };
    let pending_of = |index: &DatasetIndex| {
        slides
            .iter()
            .flat_map(|s| index.annotations_for(s))
            .filter(|x| x.source == Source::Predicted && x.review == Review::Pending)
            .count()
    };
    if proposed == 0 && decisions.is_empty() && pending_of(&index) == 0 {
        println!("no pending predictions; nothing to do");
        return Ok(());
    }
    let timestamp = a.timestamp.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    merge_review(&mut index, &decisions, Some(&ctx.catalog), &a.reviewer, timestamp)?;
    store.save(&index)?;

    // accepted boxes of every slide in one working-view frame
    let working: Vec<BBox> = slides
        .iter()
        .zip(&detected)
        .flat_map(|(id, (_, _, fx, fy))| {
            index.training_annotations(id).into_iter().map(move |x| {
                let w = ((x.bbox.width() as f64 / fx).round() as i64).max(1);
                let h = ((x.bbox.height() as f64 / fy).round() as i64).max(1);
                BBox::from_xywh(0, 0, w, h)
            })
        })
        .collect();
    let after = refit_detector(&before, &working, 1.0, 1.0);
    let refit_cfg = DetectConfig { detector: after, ..cfg.clone() };
    let old: Vec<Vec<Detection>> = detected.iter().map(|(_, d, _, _)| d.clone()).collect();
    let new = detected
        .par_iter()
        .map(|(c, ..)| detect_slide(c, &refit_cfg))
        .collect::<Result<Vec<_>>>()?;

    let log = LoopLog {
        new_predictions: proposed,
        decisions_applied: decisions.len(),
        pending: pending_of(&index),
        accepted_before,
        accepted_after: accepted_count(&index, &slides),
        rejected: slides.iter().map(|s| index.hard_negatives(s).len()).sum(),
        detector_before: before,
        detector_after: after,
        recall_before: recall(&old, &index, &slides),
        recall_after: recall(&new, &index, &slides),
    };
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    write(&detector_file, serde_json::to_string_pretty(&after)?)?;
    write(&ctx.out.join("loop_log.json"), serde_json::to_string_pretty(&log)?)?;
    println!(
        "proposed {}, applied {} decisions, {} pending; accepted {} -> {}; recall {:.3} -> {:.3}",
        log.new_predictions,
        log.decisions_applied,
        log.pending,
        log.accepted_before,
        log.accepted_after,
        log.recall_before,
        log.recall_after
    );
    ctx.manifest("loop", ctx.seed())
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
}

pub fn serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let state = vesselid_service::AppState::open(&ctx.cfg.dataset, ctx.catalog.clone())?;
    ctx.manifest("serve", ctx.seed())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    println!("listening on http://{}", a.addr);
    rt.block_on(vesselid_service::serve(state, a.addr))
        .map_err(|e| Error::io(a.addr.to_string(), e))
}
