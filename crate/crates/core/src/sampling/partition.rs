//! H/L partitions.
//!
//! `H` should be a set of rows whose gradient sum, divided by `N`, equals the
//! full gradient; equivalently the rows left in `L` sum to zero. The residual
//! `‖(1/N) Σ_{i∈H} g_i − ∇J‖ = ‖Σ_{j∈L} g_j‖ / N` measures how far a concrete
//! partition is from that ideal at the parameters where it was built.

use serde::{Deserialize, Serialize};

use super::for_each_combination;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq};
use crate::nn::GradientVector;

/// Largest population the exhaustive builder accepts.
pub const ORACLE_MAX_N: usize = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Sorted ascending.
    pub h_indices: Vec<usize>,
    /// Sorted ascending; may be empty, in which case `n2 = 0`.
    pub l_indices: Vec<usize>,
    pub n1: usize,
    pub n2: usize,
    /// Measured violation of the typical-set condition, when gradients were
    /// available at construction.
    pub residual_norm: Option<f64>,
    pub built_at_epoch: usize,
    /// `n1 / |H| >= m / N`.
    pub density_ok: bool,
}

impl Partition {
    pub fn new(mut h: Vec<usize>, mut l: Vec<usize>, n1: usize, n2: usize) -> Result<Self> {
        h.sort_unstable();
        l.sort_unstable();
        let n = h.len() + l.len();
        let mut seen = vec![false; n];
        for &i in h.iter().chain(&l) {
            if i >= n || seen[i] {
                return Err(Error::domain(format!(
                    "H and L must partition 0..{n}; index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if h.is_empty() {
            return Err(Error::domain("H must be nonempty"));
        }
        if n1 == 0 || n1 > h.len() {
            return Err(Error::domain(format!("n1 = {n1} must lie in 1..={}", h.len())));
        }
        if n2 > l.len() {
            return Err(Error::domain(format!("n2 = {n2} exceeds |L| = {}", l.len())));
        }
        let m = n1 + n2;
        let density_ok = n1 * n >= m * h.len();
        Ok(Partition {
            h_indices: h,
            l_indices: l,
            n1,
            n2,
            residual_norm: None,
            built_at_epoch: 0,
            density_ok,
        })
    }

    /// As [`Partition::new`], recording the residual for `gradients`.
    pub fn with_gradients(
        h: Vec<usize>,
        l: Vec<usize>,
        n1: usize,
        n2: usize,
        gradients: &[GradientVector],
    ) -> Result<Self> {
        let mut p = Self::new(h, l, n1, n2)?;
        if gradients.len() != p.population() {
            return Err(Error::shape(format!(
                "{} gradients for a partition of {} rows",
                gradients.len(),
                p.population()
            )));
        }
        p.residual_norm = Some(p.residual(gradients)?);
        Ok(p)
    }

    pub fn population(&self) -> usize {
        self.h_indices.len() + self.l_indices.len()
    }

    pub fn batch_size(&self) -> usize {
        self.n1 + self.n2
    }

    /// `‖Σ_{j∈L} g_j‖ / N` for the given gradients.
    pub fn residual(&self, gradients: &[GradientVector]) -> Result<f64> {
        let dim = gradients.first().map_or(0, GradientVector::len);
        let mut sum = vec![0.0; dim];
        for &j in &self.l_indices {
            let g = gradients
                .get(j)
                .ok_or_else(|| Error::shape(format!("no gradient for row {j}")))?;
            crate::linalg::axpy(1.0, g.values(), &mut sum);
        }
        Ok(norm_sq(&sum).sqrt() / self.population() as f64)
    }

    pub fn at_epoch(mut self, epoch: usize) -> Self {
        self.built_at_epoch = epoch;
        self
    }
}

/// `n1 = min(|H|, ceil(density_ratio * m * |H| / N))`, `n2 = m - n1`.
pub fn split_sizes(n_total: usize, h_size: usize, m: usize, density_ratio: f64) -> Result<(usize, usize)> {
    if !(density_ratio >= 1.0 && density_ratio.is_finite()) {
        return Err(Error::config(format!(
            "density ratio must be >= 1, got {density_ratio}"
        )));
    }
    if m == 0 || m > n_total || h_size == 0 || h_size > n_total {
        return Err(Error::config(format!(
            "batch size {m} and |H| = {h_size} must lie in 1..={n_total}"
        )));
    }
    let exact = density_ratio * (m * h_size) as f64 / n_total as f64;
    // integral products must not be bumped up by rounding noise
    let n1 = ((exact - 1e-9).ceil() as usize).clamp(1, h_size).min(m);
    let n2 = m - n1;
    if n2 > n_total - h_size {
        return Err(Error::config(format!(
            "infeasible split: n1 = {n1} from |H| = {h_size} leaves n2 = {n2} > |L| = {}",
            n_total - h_size
        )));
    }
    Ok((n1, n2))
}

/// Chooses the members of `H`.
pub trait HSelection {
    fn select(&self, gradients: &[GradientVector], target_h_size: usize) -> Result<Vec<usize>>;

    /// Same selection, free to take `gradients[i]·gradients[j]` from `kernel`
    /// instead of the flat vectors.
    fn select_with_kernel(
        &self,
        gradients: &[GradientVector],
        target_h_size: usize,
        kernel: &dyn Fn(usize, usize) -> f64,
    ) -> Result<Vec<usize>> {
        let _ = kernel;
        self.select(gradients, target_h_size)
    }
}

/// Repeatedly adds the row that most reduces `‖Σ_{i∈H} g_i − Σ_i g_i‖`;
/// ties go to the lowest index.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyForward;

/// Exact minimizer by enumeration of all subsets of the target size
/// (lexicographically first on ties). Limited to `N <= ORACLE_MAX_N`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exhaustive;

fn check_target(gradients: &[GradientVector], target: usize) -> Result<()> {
    let n = gradients.len();
    if target == 0 || target > n {
        return Err(Error::config(format!("target |H| = {target} must lie in 1..={n}")));
    }
    if let Some(g) = gradients.iter().find(|g| !g.same_layout(&gradients[0])) {
        return Err(Error::shape(format!(
            "gradient of length {} does not match length {}",
            g.len(),
            gradients[0].len()
        )));
    }
    Ok(())
}

fn total_sum(gradients: &[GradientVector]) -> Vec<f64> {
    let mut s = vec![0.0; gradients[0].len()];
    for g in gradients {
        crate::linalg::axpy(1.0, g.values(), &mut s);
    }
    s
}

fn greedy(gradients: &[GradientVector], target: usize, kernel: &dyn Fn(usize, usize) -> f64) -> Result<Vec<usize>> {
    check_target(gradients, target)?;
    let n = gradients.len();
    let total = total_sum(gradients);
    // r = Σ_H g − Σ g; adding i changes ‖r‖² by 2 r·g_i + ‖g_i‖²
    let sq: Vec<f64> = gradients.iter().map(GradientVector::norm_sq).collect();
    let mut cross: Vec<f64> = gradients.iter().map(|g| -dot(&total, g.values())).collect();
    let mut in_h = vec![false; n];
    let mut chosen = Vec::with_capacity(target);
    for _ in 0..target {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !in_h[i]) {
            let delta = 2.0 * cross[i] + sq[i];
            if best.is_none_or(|(_, b)| delta < b) {
                best = Some((i, delta));
            }
        }
        let (k, _) = best.expect("target <= n leaves a candidate");
        in_h[k] = true;
        chosen.push(k);
        if chosen.len() < target {
            for i in (0..n).filter(|&i| !in_h[i]) {
                cross[i] += kernel(k, i);
            }
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

impl HSelection for GreedyForward {
    fn select(&self, gradients: &[GradientVector], target: usize) -> Result<Vec<usize>> {
        greedy(gradients, target, &|i, j| {
            dot(gradients[i].values(), gradients[j].values())
        })
    }

    fn select_with_kernel(
        &self,
        gradients: &[GradientVector],
        target: usize,
        kernel: &dyn Fn(usize, usize) -> f64,
    ) -> Result<Vec<usize>> {
        greedy(gradients, target, kernel)
    }
}

impl HSelection for Exhaustive {
    fn select(&self, gradients: &[GradientVector], target: usize) -> Result<Vec<usize>> {
        check_target(gradients, target)?;
        let n = gradients.len();
        if n > ORACLE_MAX_N {
            return Err(Error::Capability(format!(
                "exhaustive partition search is limited to N <= {ORACLE_MAX_N}, got {n}"
            )));
        }
        let total = total_sum(gradients);
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut buf = vec![0.0; total.len()];
        for_each_combination(n, target, |subset| {
            buf.iter_mut().zip(&total).for_each(|(b, t)| *b = -t);
            for &i in subset {
                crate::linalg::axpy(1.0, gradients[i].values(), &mut buf);
            }
            let r = norm_sq(&buf);
            if best.as_ref().is_none_or(|(_, b)| r < *b) {
                best = Some((subset.to_vec(), r));
            }
        });
        Ok(best.expect("at least one subset").0)
    }
}

/// Builds a partition with the given selection strategy.
pub fn build_partition(
    strategy: &dyn HSelection,
    gradients: &[GradientVector],
    target_h_size: usize,
    m: usize,
    density_ratio: f64,
) -> Result<Partition> {
    let n = gradients.len();
    let (n1, n2) = split_sizes(n, target_h_size, m, density_ratio)?;
    let h = strategy.select(gradients, target_h_size)?;
    finish_partition(h, n, n1, n2, gradients)
}

/// [`build_partition`] with gradient inner products supplied by `kernel`.
pub fn build_partition_with_kernel(
    strategy: &dyn HSelection,
    gradients: &[GradientVector],
    kernel: &dyn Fn(usize, usize) -> f64,
    target_h_size: usize,
    m: usize,
    density_ratio: f64,
) -> Result<Partition> {
    let n = gradients.len();
    let (n1, n2) = split_sizes(n, target_h_size, m, density_ratio)?;
    let h = strategy.select_with_kernel(gradients, target_h_size, kernel)?;
    finish_partition(h, n, n1, n2, gradients)
}

fn finish_partition(h: Vec<usize>, n: usize, n1: usize, n2: usize, gradients: &[GradientVector]) -> Result<Partition> {
    let mut in_h = vec![false; n];
    for &i in &h {
        in_h[i] = true;
    }
    let l: Vec<usize> = (0..n).filter(|&i| !in_h[i]).collect();
    Partition::with_gradients(h, l, n1, n2, gradients)
}

pub fn build_partition_greedy(
    gradients: &[GradientVector],
    target_h_size: usize,
    m: usize,
    density_ratio: f64,
) -> Result<Partition> {
    build_partition(&GreedyForward, gradients, target_h_size, m, density_ratio)
}

pub fn build_partition_oracle(
    gradients: &[GradientVector],
    target_h_size: usize,
    m: usize,
    density_ratio: f64,
) -> Result<Partition> {
    build_partition(&Exhaustive, gradients, target_h_size, m, density_ratio)
}
