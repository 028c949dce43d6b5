//! Annotation persistence, leakage-safe splits, review merging and
//! dataset statistics.
//!
//! On disk a dataset is a directory:
//!
//! ```text
//! index.json              slide metadata
//! annotations/<slide>.txt one annotation per line
//! audit.jsonl             one review event per line
//! slides/<slide_id>/      tiled slide containers
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Annotation, BBox, Review, SlideMeta, Source};

pub mod review;
pub mod split;

pub use review::{merge_review, AuditRecord, Decision, ReviewDecision};
pub use split::{check_leakage, split, Partition, SplitAssignment, SplitRatios};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub slides: Vec<SlideMeta>,
    /// Annotations keyed by slide id.
    #[serde(default)]
    pub annotations: BTreeMap<String, Vec<Annotation>>,
    #[serde(default)]
    pub audit: Vec<AuditRecord>,
}

impl DatasetIndex {
    pub fn slide(&self, slide_id: &str) -> Result<&SlideMeta> {
        self.slides
            .iter()
            .find(|s| s.slide_id == slide_id)
            .ok_or_else(|| Error::UnknownSlide(slide_id.to_string()))
    }

    pub fn add_slide(&mut self, meta: SlideMeta) -> Result<()> {
        meta.validate()?;
        if self.slides.iter().any(|s| s.slide_id == meta.slide_id) {
            return Err(Error::Invalid(format!("slide `{}` already indexed", meta.slide_id)));
        }
        self.annotations.entry(meta.slide_id.clone()).or_default();
        self.slides.push(meta);
        Ok(())
    }

    /// Appends annotations to their slides after checking every record.
    pub fn add_annotations(&mut self, anns: Vec<Annotation>) -> Result<()> {
        for a in &anns {
            a.validate()?;
            let slide = self.slide(&a.slide_id)?;
            if !slide.bounds().contains(&a.bbox) {
                return Err(Error::OutOfRange(format!(
                    "annotation `{}` box {} exceeds slide `{}`",
                    a.annotation_id, a.bbox, a.slide_id
                )));
            }
            if self.find(&a.annotation_id).is_some() {
                return Err(Error::Invalid(format!("duplicate annotation id `{}`", a.annotation_id)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = anns.iter().find(|a| !seen.insert(a.annotation_id.as_str())) {
            return Err(Error::Invalid(format!("duplicate annotation id `{}`", dup.annotation_id)));
        }
        for a in anns {
            self.annotations.entry(a.slide_id.clone()).or_default().push(a);
        }
        Ok(())
    }

    pub fn annotations_for(&self, slide_id: &str) -> &[Annotation] {
        self.annotations.get(slide_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn find(&self, annotation_id: &str) -> Option<&Annotation> {
        self.annotations.values().flatten().find(|a| a.annotation_id == annotation_id)
    }

    pub(crate) fn find_mut(&mut self, annotation_id: &str) -> Option<&mut Annotation> {
        self.annotations.values_mut().flatten().find(|a| a.annotation_id == annotation_id)
    }

    /// Maceration id to the slides prepared from it.
    pub fn macerations(&self) -> BTreeMap<String, Vec<String>> {
        let mut m: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for s in &self.slides {
            m.entry(s.maceration_id.clone()).or_default().push(s.slide_id.clone());
        }
        m
    }

    /// Accepted annotations of a slide, the ones a training export uses.
    pub fn training_annotations(&self, slide_id: &str) -> Vec<&Annotation> {
        self.annotations_for(slide_id).iter().filter(|a| a.is_accepted()).collect()
    }

    /// Rejected predictions, kept as hard negatives for detector training.
    pub fn hard_negatives(&self, slide_id: &str) -> Vec<&Annotation> {
        self.annotations_for(slide_id)
            .iter()
            .filter(|a| a.review == Review::Rejected)
            .collect()
    }

    /// Next free prediction id for a slide: `<slide>-d-<n>`.
    pub fn next_prediction_id(&self, slide_id: &str) -> String {
        let n = self
            .annotations_for(slide_id)
            .iter()
            .filter(|a| a.source != Source::Human)
            .count();
        let mut k = n;
        loop {
            let id = format!("{slide_id}-d-{k:05}");
            if self.find(&id).is_none() {
                return id;
            }
            k += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenusStats {
    pub genus: String,
    /// Slides with at least one accepted annotation of the genus.
    pub images: usize,
    pub vessels: usize,
}

/// Per-genus counts over accepted annotations, most vessels first.
pub fn stats(index: &DatasetIndex) -> Vec<GenusStats> {
    let mut by: BTreeMap<&str, (std::collections::BTreeSet<&str>, usize)> = BTreeMap::new();
    for (slide, anns) in &index.annotations {
        for a in anns.iter().filter(|a| a.is_accepted()) {
            let Some(g) = a.genus.as_deref() else { continue };
            let e = by.entry(g).or_default();
            e.0.insert(slide);
            e.1 += 1;
        }
    }
    let mut rows: Vec<GenusStats> = by
        .into_iter()
        .map(|(g, (slides, n))| GenusStats {
            genus: g.to_string(),
            images: slides.len(),
            vessels: n,
        })
        .collect();
    rows.sort_by(|a, b| b.vessels.cmp(&a.vessels).then_with(|| a.genus.cmp(&b.genus)));
    rows
}

fn opt_field(s: &str) -> Option<&str> {
    match s {
        "-" => None,
        other => Some(other),
    }
}

/// One annotation line: `id, x0 y0 x1 y1, genus|-, confidence|-, source,
/// review, version[, note]`.
pub fn format_annotation(a: &Annotation) -> String {
    let mut s = format!(
        "{}, {}, {}, {}, {}, {}, {}",
        a.annotation_id,
        a.bbox,
        a.genus.as_deref().unwrap_or("-"),
        a.confidence.map_or("-".to_string(), |c| c.to_string()),
        a.source,
        a.review,
        a.version
    );
    if let Some(n) = &a.note {
        s.push_str(", ");
        s.push_str(&n.replace('\n', " "));
    }
    s
}

pub fn parse_annotation(line: &str, slide_id: &str, origin: &str, line_no: usize) -> Result<Annotation> {
    let err = |m: String| Error::parse(origin, line_no, m);
    let f: Vec<&str> = line.splitn(8, ',').map(str::trim).collect();
    if f.len() < 7 {
        return Err(err(format!("expected at least 7 fields, got {}", f.len())));
    }
    let coords: Vec<i64> = f[1]
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(format!("bbox: {e}")))?;
    if coords.len() != 4 {
        return Err(err("bbox needs 4 integers".into()));
    }
    let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| err(e.to_string()))?;
    let confidence = opt_field(f[3])
        .map(|c| c.parse::<f64>().map_err(|e| err(format!("confidence: {e}"))))
        .transpose()?;
    let a = Annotation {
        annotation_id: f[0].to_string(),
        slide_id: slide_id.to_string(),
        bbox,
        genus: opt_field(f[2]).map(str::to_string),
        confidence,
        source: f[4].parse().map_err(|e: Error| err(e.to_string()))?,
        review: f[5].parse().map_err(|e: Error| err(e.to_string()))?,
        version: f[6].parse().map_err(|e| err(format!("version: {e}")))?,
        note: f.get(7).filter(|n| !n.is_empty()).map(|n| n.to_string()),
    };
    a.validate().map_err(|e| err(e.to_string()))?;
    Ok(a)
}

pub fn format_annotation_file(anns: &[Annotation]) -> String {
    anns.iter().map(|a| format_annotation(a) + "\n").collect()
}

pub fn parse_annotation_file(text: &str, slide_id: &str, origin: &str) -> Result<Vec<Annotation>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| parse_annotation(l, slide_id, origin, i + 1))
        .collect()
}

/// Writes via a temporary file and rename so readers never see a partial
/// file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetStore {
    root: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    slides: Vec<SlideMeta>,
}

impl DatasetStore {
    /// Opens `root`, creating the layout if it does not exist yet.
    pub fn open(root: &Path) -> Result<Self> {
        for d in [root.to_path_buf(), root.join("annotations"), root.join("slides")] {
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let store = Self { root: root.to_path_buf() };
        if !store.index_path().exists() {
            write_atomic(&store.index_path(), b"{\"slides\": []}\n")?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn slides_dir(&self) -> PathBuf {
        self.root.join("slides")
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("index.json")
    }

    pub fn annotation_path(&self, slide_id: &str) -> PathBuf {
        self.root.join("annotations").join(format!("{slide_id}.txt"))
    }

    pub fn audit_path(&self) -> PathBuf {
        self.root.join("audit.jsonl")
    }

    pub fn load(&self) -> Result<DatasetIndex> {
        let p = self.index_path();
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let file: IndexFile = serde_json::from_str(&text)?;
        let mut index = DatasetIndex::default();
        for s in file.slides {
            let ap = self.annotation_path(&s.slide_id);
            let anns = if ap.exists() {
                let text = std::fs::read_to_string(&ap).map_err(|e| Error::io(&ap, e))?;
                parse_annotation_file(&text, &s.slide_id, &ap.display().to_string())?
            } else {
                Vec::new()
            };
            index.add_slide(s)?;
            index.add_annotations(anns)?;
        }
        let audit = self.audit_path();
        if audit.exists() {
            let text = std::fs::read_to_string(&audit).map_err(|e| Error::io(&audit, e))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec = serde_json::from_str(line)
                    .map_err(|e| Error::parse(audit.display().to_string(), i + 1, e.to_string()))?;
                index.audit.push(rec);
            }
        }
        Ok(index)
    }

    /// Writes the index and every slide's annotation file. Audit records
    /// not yet on disk are appended.
    pub fn save(&self, index: &DatasetIndex) -> Result<()> {
        let json = serde_json::to_string_pretty(&IndexFile { slides: index.slides.clone() })?;
        write_atomic(&self.index_path(), json.as_bytes())?;
        for s in &index.slides {
            let text = format_annotation_file(index.annotations_for(&s.slide_id));
            write_atomic(&self.annotation_path(&s.slide_id), text.as_bytes())?;
        }
        let audit = self.audit_path();
        let on_disk = if audit.exists() {
            std::fs::read_to_string(&audit)
                .map_err(|e| Error::io(&audit, e))?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .count()
        } else {
            0
        };
        if index.audit.len() > on_disk {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&audit)
                .map_err(|e| Error::io(&audit, e))?;
            for rec in &index.audit[on_disk..] {
                let line = serde_json::to_string(rec)? + "\n";
                f.write_all(line.as_bytes()).map_err(|e| Error::io(&audit, e))?;
            }
        }
        Ok(())
    }
}
