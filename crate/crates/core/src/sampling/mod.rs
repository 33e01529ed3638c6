//! Batch construction and the moments of the resulting gradient estimators.
//!
//! Two samplers are supported. Simple random sampling (SRS) draws `m`
//! distinct rows uniformly. Typicality sampling (TS) splits the rows into a
//! highly representative subset `H` and its complement `L`, then draws `n1`
//! rows from `H` and `n2` from `L`, each stratum by SRS.

mod draw;
mod moments;
mod partition;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use draw::{srs_draw, srs_draw_with, typicality_draw, typicality_draw_with};
pub use moments::{
    analytic_moments_srs, analytic_moments_ts, enumerate_moments, monte_carlo_moments,
    monte_carlo_moments_from_gradients, ts_closed_form, MomentMethod, MomentReport, ENUMERATION_LIMIT,
};
pub use partition::{
    build_partition, build_partition_greedy, build_partition_oracle, build_partition_with_kernel, split_sizes,
    Exhaustive, GreedyForward, HSelection, Partition, ORACLE_MAX_N,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    H,
    L,
    Srs,
}

/// One minibatch: distinct row indices and the stratum each came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchDraw {
    pub indices: Vec<usize>,
    pub source_tags: Vec<SourceTag>,
}

/// How batches are drawn from a population of `N` rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Srs { n_total: usize, m: usize },
    Typicality(Partition),
}

impl Sampler {
    pub fn srs(n_total: usize, m: usize) -> Result<Self> {
        if m == 0 || m > n_total {
            return Err(Error::domain(format!("batch size {m} must lie in 1..={n_total}")));
        }
        Ok(Sampler::Srs { n_total, m })
    }

    pub fn batch_size(&self) -> usize {
        match self {
            Sampler::Srs { m, .. } => *m,
            Sampler::Typicality(p) => p.n1 + p.n2,
        }
    }

    pub fn population(&self) -> usize {
        match self {
            Sampler::Srs { n_total, .. } => *n_total,
            Sampler::Typicality(p) => p.population(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Sampler::Srs { .. } => "srs",
            Sampler::Typicality(_) => "ts",
        }
    }

    pub fn draw_with(&self, rng: &mut ChaCha8Rng) -> Result<BatchDraw> {
        match self {
            Sampler::Srs { n_total, m } => srs_draw_with(*n_total, *m, rng),
            Sampler::Typicality(p) => typicality_draw_with(p, rng),
        }
    }

    pub fn draw(&self, seed: u64) -> Result<BatchDraw> {
        self.draw_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Number of equally likely batches.
    pub fn batch_count(&self) -> f64 {
        match self {
            Sampler::Srs { n_total, m } => binomial(*n_total, *m),
            Sampler::Typicality(p) => binomial(p.h_indices.len(), p.n1) * binomial(p.l_indices.len(), p.n2),
        }
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order.
pub(crate) fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // rightmost position that can still advance
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
