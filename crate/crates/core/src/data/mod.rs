//! Datasets: the synthetic 12-bit task, file loaders and split handling.

mod binfmt;
mod idx;
mod synthetic;
mod table;

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use binfmt::{decode_dataset, encode_dataset, read_dataset, write_dataset};
pub use idx::{load_idx, parse_idx, IdxTensor};
pub use synthetic::{gen_synthetic, pattern_inputs, SyntheticRule, SYNTHETIC_BITS};
pub use table::{load_csv, write_csv, CsvSchema, MinMaxScaler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

/// Immutable inputs + integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
    source_id: String,
}

impl Dataset {
    pub fn new(
        inputs: Matrix,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::domain("class_count must be positive"));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= class_count) {
            return Err(Error::domain(format!(
                "label {y} at row {i} is outside [0, {class_count})"
            )));
        }
        if let Some(pos) = inputs.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite input at row {}",
                pos / inputs.cols().max(1)
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
            split,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Training splits must contain every class.
    pub fn require_all_classes(&self) -> Result<()> {
        if let Some(c) = self.class_counts().iter().position(|&n| n == 0) {
            return Err(Error::domain(format!(
                "class {c} has no rows in {} split of {}",
                self.split.as_str(),
                self.source_id
            )));
        }
        Ok(())
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split: self.split,
            source_id: self.source_id.clone(),
        }
    }
}

/// Draw `n` rows. Stratified draws allot each class its proportional share
/// (largest remainder, so within one row of exact) and require every class
/// to keep at least one row. Selected rows keep their original order.
pub fn subsample(dataset: &Dataset, n: usize, stratified: bool, seed: u64) -> Result<Dataset> {
    let total = dataset.len();
    if n > total {
        return Err(Error::domain(format!("cannot subsample {n} rows from {total}")));
    }
    if n == total {
        return Ok(dataset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in dataset.labels().iter().enumerate() {
            by_class.entry(y).or_default().push(i);
        }
        let quotas = proportional_quotas(&by_class.values().map(Vec::len).collect::<Vec<_>>(), n);
        let mut chosen = Vec::with_capacity(n);
        for ((class, members), quota) in by_class.iter().zip(quotas) {
            if quota == 0 {
                return Err(Error::domain(format!(
                    "stratified subsample of {n} leaves class {class} empty"
                )));
            }
            for k in index::sample(&mut rng, members.len(), quota) {
                chosen.push(members[k]);
            }
        }
        chosen
    } else {
        index::sample(&mut rng, total, n).into_vec()
    };
    chosen.sort_unstable();
    Ok(dataset.select(&chosen))
}

fn proportional_quotas(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * n / total).collect();
    let mut remainders: Vec<(usize, usize)> = counts.iter().enumerate().map(|(k, &c)| ((c * n) % total, k)).collect();
    // largest remainder first, lower class index on ties
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: usize = quotas.iter().sum();
    for &(_, k) in remainders.iter().take(n - assigned) {
        quotas[k] += 1;
    }
    quotas
}
