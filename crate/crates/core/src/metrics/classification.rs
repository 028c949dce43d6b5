//! F-beta, confusion matrices, macro F1 and class merging.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::catalog::GenusCatalog;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(1 + β²)·p·r / (β²·p + r)`, 0 when the denominator vanishes.
pub fn f_beta<S: Scalar>(precision: S, recall: S, beta: S) -> S {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == S::zero() {
        return S::zero();
    }
    (S::one() + b2) * precision * recall / denom
}

/// Square count matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    /// Row-major `n × n` counts.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            counts: vec![0; n * n],
        }
    }

    pub fn for_catalog(catalog: &GenusCatalog) -> Self {
        Self::new(catalog.names().to_vec())
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        let n = labels.len();
        if counts.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: counts.len(),
            });
        }
        Ok(Self { labels, counts })
    }

    pub fn from_rows(labels: Vec<String>, rows: &[Vec<u64>]) -> Result<Self> {
        Self::from_counts(labels, rows.iter().flatten().copied().collect())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n() + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.add_count(truth, predicted, 1);
    }

    pub fn add_count(&mut self, truth: usize, predicted: usize, count: u64) {
        let n = self.n();
        assert!(truth < n && predicted < n, "class index out of range");
        self.counts[truth * n + predicted] += count;
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.n()).map(|j| self.get(truth, j)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.n()).map(|i| self.get(i, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.n().max(1))
    }

    pub fn accuracy<S: Scalar>(&self) -> S {
        let total = self.total();
        if total == 0 {
            return S::zero();
        }
        let diag: u64 = (0..self.n()).map(|i| self.get(i, i)).sum();
        S::ratio(diag, total)
    }

    pub fn class_precision<S: Scalar>(&self, i: usize) -> S {
        let col = self.col_sum(i);
        if col == 0 {
            S::zero()
        } else {
            S::ratio(self.get(i, i), col)
        }
    }

    pub fn class_recall<S: Scalar>(&self, i: usize) -> S {
        let row = self.row_sum(i);
        if row == 0 {
            S::zero()
        } else {
            S::ratio(self.get(i, i), row)
        }
    }

    pub fn class_f1<S: Scalar>(&self, i: usize) -> S {
        f_beta(self.class_precision(i), self.class_recall(i), S::one())
    }

    /// Unweighted mean of per-class F1 over the classes that occur, either
    /// as truth or as prediction. A class with an empty row or column but
    /// not both contributes a zero precision or recall.
    pub fn macro_f1<S: Scalar>(&self) -> S {
        let seen: Vec<usize> = (0..self.n()).filter(|&i| self.row_sum(i) + self.col_sum(i) > 0).collect();
        if seen.is_empty() {
            return S::zero();
        }
        let sum = seen.iter().fold(S::zero(), |a, &i| a + self.class_f1::<S>(i));
        sum / S::from_count(seen.len() as u64)
    }

    /// Sums rows and columns of classes that map to the same merged label.
    /// Merged classes appear in order of first occurrence; labels absent
    /// from `mapping` keep their own name.
    pub fn merge_classes(&self, mapping: &HashMap<String, String>) -> ConfusionMatrix {
        let target = |l: &String| mapping.get(l).unwrap_or(l).clone();
        let mut merged: Vec<String> = Vec::new();
        let index: Vec<usize> = self
            .labels
            .iter()
            .map(|l| {
                let t = target(l);
                match merged.iter().position(|m| *m == t) {
                    Some(i) => i,
                    None => {
                        merged.push(t);
                        merged.len() - 1
                    }
                }
            })
            .collect();
        let mut out = ConfusionMatrix::new(merged);
        for i in 0..self.n() {
            for j in 0..self.n() {
                out.add_count(index[i], index[j], self.get(i, j));
            }
        }
        out
    }

    /// Same counts with classes reordered: new class `k` is old class
    /// `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> ConfusionMatrix {
        assert_eq!(order.len(), self.n());
        let labels = order.iter().map(|&i| self.labels[i].clone()).collect();
        let mut out = ConfusionMatrix::new(labels);
        for (a, &i) in order.iter().enumerate() {
            for (b, &j) in order.iter().enumerate() {
                out.add_count(a, b, self.get(i, j));
            }
        }
        out
    }
}

/// Builds a merge mapping from groups of labels; each group is named by
/// joining its members with `+`.
pub fn merge_groups(groups: &[Vec<String>]) -> HashMap<String, String> {
    let mut map = HashMap::new();
    for g in groups {
        let name = g.join("+");
        for member in g {
            map.insert(member.clone(), name.clone());
        }
    }
    map
}
