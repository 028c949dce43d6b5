//! Maceration-level, per-genus stratified train/val/test splits.
//!
//! The unit of assignment is the maceration: every slide and crop from one
//! preparation lands in the same partition, so preparation artifacts cannot
//! leak between training and evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{write_atomic, DatasetIndex};

/// Macerations per genus at which the search switches from exhaustive
/// enumeration to greedy assignment with swap refinement.
pub const EXHAUSTIVE_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|r| !(0.0..=1.0).contains(r)) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "split ratios {}/{}/{} must be in [0, 1] and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplitFile", into = "SplitFile")]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub partition: BTreeMap<String, Partition>,
}

/// Export format: one list of maceration ids per partition.
#[derive(Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    ratios: SplitRatios,
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

impl TryFrom<SplitFile> for SplitAssignment {
    type Error = Error;

    fn try_from(f: SplitFile) -> Result<Self> {
        let mut partition = BTreeMap::new();
        for (p, ids) in [(Partition::Train, f.train), (Partition::Val, f.val), (Partition::Test, f.test)] {
            for id in ids {
                if let Some(prev) = partition.insert(id.clone(), p) {
                    return Err(Error::Leakage(format!("maceration `{id}` is in both {prev} and {p}")));
                }
            }
        }
        Ok(Self {
            seed: f.seed,
            ratios: f.ratios,
            partition,
        })
    }
}

impl From<SplitAssignment> for SplitFile {
    fn from(s: SplitAssignment) -> Self {
        let list = |p| s.partition.iter().filter(|(_, q)| **q == p).map(|(m, _)| m.clone()).collect();
        SplitFile {
            seed: s.seed,
            ratios: s.ratios,
            train: list(Partition::Train),
            val: list(Partition::Val),
            test: list(Partition::Test),
        }
    }
}

impl SplitAssignment {
    pub fn partition_of(&self, maceration_id: &str) -> Option<Partition> {
        self.partition.get(maceration_id).copied()
    }

    pub fn macerations_in(&self, p: Partition) -> BTreeSet<&str> {
        self.partition.iter().filter(|(_, q)| **q == p).map(|(m, _)| m.as_str()).collect()
    }

    /// Slides of `index` whose maceration is in partition `p`.
    pub fn slides_in<'a>(&self, index: &'a DatasetIndex, p: Partition) -> Vec<&'a str> {
        index
            .slides
            .iter()
            .filter(|s| self.partition_of(&s.maceration_id) == Some(p))
            .map(|s| s.slide_id.as_str())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // surface leakage as its own error rather than a generic JSON one
        let file: SplitFile = serde_json::from_str(&text)?;
        SplitAssignment::try_from(file)
    }
}

/// Fails when any evaluated maceration was also used for training.
pub fn check_leakage<'a>(
    training: impl IntoIterator<Item = &'a str>,
    evaluated: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let train: BTreeSet<&str> = training.into_iter().collect();
    let shared: Vec<&str> = evaluated.into_iter().filter(|m| train.contains(m)).collect::<BTreeSet<_>>().into_iter().collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::Leakage(format!(
            "macerations used for training are being evaluated: {}",
            shared.join(", ")
        )))
    }
}

/// Genus of each maceration: the slide genus, or for mixed slides the most
/// frequent accepted annotation genus. Slides of one maceration must agree.
fn maceration_genera(index: &DatasetIndex) -> Result<BTreeMap<String, String>> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    for s in &index.slides {
        let genus = match &s.genus {
            Some(g) => g.clone(),
            None => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for a in index.training_annotations(&s.slide_id) {
                    if let Some(g) = a.genus.as_deref() {
                        *counts.entry(g).or_default() += 1;
                    }
                }
                counts
                    .into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
                    .map(|(g, _)| g.to_string())
                    .ok_or_else(|| {
                        Error::Invalid(format!("slide `{}` has no genus to stratify on", s.slide_id))
                    })?
            }
        };
        if let Some(prev) = out.insert(s.maceration_id.clone(), genus.clone()) {
            if prev != genus {
                return Err(Error::Invalid(format!(
                    "maceration `{}` has slides of {prev} and {genus}",
                    s.maceration_id
                )));
            }
        }
    }
    Ok(out)
}

/// Lexicographic objective: worst share deviation, then total deviation.
fn score(counts: &[f64; 3], total: f64, ratios: &[f64; 3]) -> (f64, f64) {
    let dev: Vec<f64> = (0..3).map(|p| (counts[p] / total - ratios[p]).abs()).collect();
    (dev.iter().cloned().fold(0.0, f64::max), dev.iter().sum())
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    const EPS: f64 = 1e-12;
    a.0 < b.0 - EPS || ((a.0 - b.0).abs() <= EPS && a.1 < b.1 - EPS)
}

/// Assigns weighted items to three partitions, each partition with a
/// positive ratio receiving at least one item.
fn assign(weights: &[f64], ratios: &[f64; 3]) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let needs: Vec<usize> = (0..3).filter(|&p| ratios[p] > 0.0).collect();
    let feasible = |labels: &[usize]| needs.iter().all(|p| labels.contains(p));

    if n <= EXHAUSTIVE_LIMIT {
        let mut best: Option<(Vec<usize>, (f64, f64))> = None;
        let mut labels = vec![0usize; n];
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            for l in labels.iter_mut() {
                *l = c % 3;
                c /= 3;
            }
            if !feasible(&labels) {
                continue;
            }
            let mut counts = [0.0; 3];
            for (i, &l) in labels.iter().enumerate() {
                counts[l] += weights[i];
            }
            let s = score(&counts, total, ratios);
            if best.as_ref().is_none_or(|(_, b)| better(s, *b)) {
                best = Some((labels.clone(), s));
            }
        }
        return best.expect("at least three items").0;
    }

    // greedy: heaviest first into the partition furthest below its target
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut labels = vec![0usize; n];
    let mut counts = [0.0; 3];
    for (k, &i) in order.iter().enumerate() {
        // reserve the lightest items for partitions that are still empty
        let empty: Vec<usize> = needs.iter().copied().filter(|&p| counts[p] == 0.0).collect();
        let p = if n - k <= empty.len() {
            empty[0]
        } else {
            (0..3)
                .filter(|&p| ratios[p] > 0.0)
                .max_by(|&a, &b| {
                    (ratios[a] * total - counts[a]).total_cmp(&(ratios[b] * total - counts[b])).then(b.cmp(&a))
                })
                .expect("a positive ratio")
        };
        labels[i] = p;
        counts[p] += weights[i];
    }
    // refine with single moves and pairwise swaps until no improvement
    let counts_of = |labels: &[usize]| {
        let mut c = [0.0; 3];
        for (i, &l) in labels.iter().enumerate() {
            c[l] += weights[i];
        }
        c
    };
    let mut current = score(&counts_of(&labels), total, ratios);
    loop {
        let mut improved = false;
        for i in 0..n {
            for p in 0..3 {
                if labels[i] == p {
                    continue;
                }
                let old = labels[i];
                labels[i] = p;
                let s = score(&counts_of(&labels), total, ratios);
                if feasible(&labels) && better(s, current) {
                    current = s;
                    improved = true;
                } else {
                    labels[i] = old;
                }
            }
            for j in i + 1..n {
                if labels[i] == labels[j] {
                    continue;
                }
                labels.swap(i, j);
                let s = score(&counts_of(&labels), total, ratios);
                if better(s, current) {
                    current = s;
                    improved = true;
                } else {
                    labels.swap(i, j);
                }
            }
        }
        if !improved {
            return labels;
        }
    }
}

fn genus_seed(seed: u64, genus: &str) -> u64 {
    // FNV-1a of the genus name mixed into the seed
    let h = genus
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    seed ^ h
}

/// Stratified split: for each genus its macerations are distributed so that
/// each partition's share of the genus's accepted annotations is as close
/// as possible to the requested ratio. Ties are broken by a seed-keyed
/// shuffle of the macerations.
pub fn split(index: &DatasetIndex, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    ratios.validate()?;
    let genera = maceration_genera(index)?;
    let mut weight: BTreeMap<&str, f64> = BTreeMap::new();
    for s in &index.slides {
        *weight.entry(s.maceration_id.as_str()).or_default() += index.training_annotations(&s.slide_id).len() as f64;
    }
    let mut by_genus: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (m, g) in &genera {
        by_genus.entry(g.as_str()).or_default().push(m.as_str());
    }
    let r = ratios.as_array();
    let mut partition = BTreeMap::new();
    for (genus, mut macs) in by_genus {
        if macs.len() < 3 {
            return Err(Error::TooFewMacerations {
                genus: genus.to_string(),
                count: macs.len(),
            });
        }
        macs.shuffle(&mut ChaCha8Rng::seed_from_u64(genus_seed(seed, genus)));
        let mut w: Vec<f64> = macs.iter().map(|m| weight[m]).collect();
        if w.iter().sum::<f64>() == 0.0 {
            w = vec![1.0; macs.len()];
        }
        for (m, l) in macs.iter().zip(assign(&w, &r)) {
            partition.insert(m.to_string(), Partition::ALL[l]);
        }
    }
    Ok(SplitAssignment {
        seed,
        ratios,
        partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Annotation, BBox, SlideMeta};

    /// One slide per maceration with `counts[i]` accepted boxes.
    fn index(genus: &str, counts: &[usize]) -> DatasetIndex {
        let mut idx = DatasetIndex::default();
        add(&mut idx, genus, counts);
        idx
    }

    fn add(idx: &mut DatasetIndex, genus: &str, counts: &[usize]) {
        for (i, &n) in counts.iter().enumerate() {
            let slide = format!("{genus}-s{i}");
            idx.add_slide(SlideMeta::new(&slide, format!("{genus}-m{i}"), Some(genus.into()), 5000, 5000))
                .unwrap();
            let anns = (0..n)
                .map(|k| Annotation::human(format!("{slide}-{k}"), &slide, BBox::from_xywh(k as i64, 0, 1, 1), Some(genus.into())))
                .collect();
            idx.add_annotations(anns).unwrap();
        }
    }

    #[test]
    fn three_macerations_one_each() {
        let idx = index("Fagus", &[10, 20, 30]);
        let third = 1.0 / 3.0;
        let s = split(&idx, SplitRatios { train: third, val: third, test: 1.0 - 2.0 * third }, 1).unwrap();
        for p in Partition::ALL {
            assert_eq!(s.macerations_in(p).len(), 1);
        }
    }

    #[test]
    fn two_genera_disjoint() {
        let mut idx = index("Fagus", &[5, 5, 5]);
        add(&mut idx, "Hevea", &[5, 6, 7]);
        let s = split(&idx, SplitRatios::default(), 3).unwrap();
        assert_eq!(s.partition.len(), 6);
    }

    #[test]
    fn too_few_macerations_names_genus() {
        let mut idx = index("Fagus", &[5, 5, 5]);
        add(&mut idx, "Salix", &[5, 5]);
        match split(&idx, SplitRatios::default(), 0) {
            Err(Error::TooFewMacerations { genus, count }) => assert_eq!((genus.as_str(), count), ("Salix", 2)),
            other => panic!("{other:?}"),
        }
    }

    /// Brute-force optimum of the worst per-partition share deviation.
    fn oracle_best(weights: &[f64], r: &[f64; 3]) -> f64 {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(n as u32) {
            let mut c = [0.0; 3];
            let mut used = [false; 3];
            let mut k = code;
            for w in weights {
                c[k % 3] += w;
                used[k % 3] = true;
                k /= 3;
            }
            if used.iter().all(|u| *u) {
                let worst = (0..3).map(|p| (c[p] / total - r[p]).abs()).fold(0.0, f64::max);
                best = best.min(worst);
            }
        }
        best
    }

    #[test]
    fn ten_macerations_reach_the_optimum() {
        let counts = [12, 40, 7, 33, 25, 18, 51, 9, 14, 30];
        let idx = index("Fagus", &counts);
        let s = split(&idx, SplitRatios::default(), 9).unwrap();
        let sizes: Vec<usize> = Partition::ALL.iter().map(|p| s.macerations_in(*p).len()).collect();
        assert!(sizes.iter().all(|&n| n >= 1));
        let total: usize = counts.iter().sum();
        let share = |p| {
            s.slides_in(&idx, p).iter().map(|sl| idx.training_annotations(sl).len()).sum::<usize>() as f64 / total as f64
        };
        let r = [0.6, 0.2, 0.2];
        let worst = Partition::ALL.iter().map(|&p| (share(p) - r[p.index()]).abs()).fold(0.0, f64::max);
        let w: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        assert!((worst - oracle_best(&w, &r)).abs() < 1e-12);
    }

    #[test]
    fn greedy_path_is_feasible_and_close() {
        let w: Vec<f64> = (0..20).map(|i| (7 * i % 13 + 3) as f64).collect();
        let r = [0.6, 0.2, 0.2];
        let labels = assign(&w, &r);
        assert!((0..3).all(|p| labels.contains(&p)));
        let total: f64 = w.iter().sum();
        for p in 0..3 {
            let c: f64 = labels.iter().zip(&w).filter(|(l, _)| **l == p).map(|(_, w)| w).sum();
            assert!((c / total - r[p]).abs() < 0.05);
        }
    }

    #[test]
    fn deterministic_and_exportable() {
        let idx = index("Fagus", &[3, 4, 5, 6, 7]);
        let a = split(&idx, SplitRatios::default(), 42).unwrap();
        assert_eq!(a, split(&idx, SplitRatios::default(), 42).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        a.save(&path).unwrap();
        assert_eq!(SplitAssignment::load(&path).unwrap(), a);
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(json["train"].is_array());
    }

    #[test]
    fn leaking_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        std::fs::write(&path, r#"{"seed":1,"ratios":{"train":0.6,"val":0.2,"test":0.2},"train":["m1"],"val":["m1"],"test":[]}"#).unwrap();
        assert!(matches!(SplitAssignment::load(&path), Err(Error::Leakage(_))));
        assert!(check_leakage(["a", "b"], ["c"]).is_ok());
        assert!(matches!(check_leakage(["a", "b"], ["b"]), Err(Error::Leakage(_))));
    }
}
