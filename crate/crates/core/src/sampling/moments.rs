//! Mean and scalar variance `E‖ĝ − E ĝ‖²` of the minibatch gradient
//! `ĝ = (1/m) Σ_{i∈B} g_i`, by closed form, by enumeration of every batch, or
//! by Monte-Carlo batch resampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{for_each_combination, Partition, Sampler};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, norm_sq, sq_dist};
use crate::nn::{GradientVector, NetworkState};

/// Most batches [`enumerate_moments`] will visit.
pub const ENUMERATION_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMethod {
    AnalyticSrs,
    AnalyticTs,
    Enumeration,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub mean: GradientVector,
    pub variance: f64,
    pub std: f64,
    pub method: MomentMethod,
    /// Monte-Carlo only.
    pub draw_count: Option<usize>,
    /// Monte-Carlo only: standard error of `variance`.
    pub variance_stderr: Option<f64>,
    /// Set when a typicality partition's `L` stratum does not sum to zero,
    /// so the closed forms that assume it no longer apply verbatim.
    pub def2_violated: bool,
}

impl MomentReport {
    fn new(mean: GradientVector, variance: f64, method: MomentMethod) -> Self {
        let variance = variance.max(0.0);
        MomentReport {
            mean,
            variance,
            std: variance.sqrt(),
            method,
            draw_count: None,
            variance_stderr: None,
            def2_violated: false,
        }
    }
}

fn check_gradients(gradients: &[GradientVector]) -> Result<()> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::domain("no per-sample gradients"))?;
    if gradients.iter().any(|g| !g.same_layout(first)) {
        return Err(Error::shape("per-sample gradients have differing layouts"));
    }
    Ok(())
}

fn check_partition(gradients: &[GradientVector], p: &Partition) -> Result<()> {
    if p.population() != gradients.len() {
        return Err(Error::shape(format!(
            "partition covers {} rows, {} gradients supplied",
            p.population(),
            gradients.len()
        )));
    }
    // re-validate in case the public fields were edited
    Partition::new(p.h_indices.clone(), p.l_indices.clone(), p.n1, p.n2).map(|_| ())
}

/// `(Σ g, Σ ‖g‖²)` over `indices`.
fn stratum_sums(gradients: &[GradientVector], indices: &[usize]) -> (Vec<f64>, f64) {
    let mut sum = vec![0.0; gradients[0].len()];
    let mut sq = 0.0;
    for &i in indices {
        axpy(1.0, gradients[i].values(), &mut sum);
        sq += gradients[i].norm_sq();
    }
    (sum, sq)
}

/// Variance contributed by drawing `k` of the `size` rows of one stratum
/// without replacement, before the `1/m²` factor:
/// `k/(size(size−1)) · (1 − k/size) · [size Σ‖g‖² − ‖Σ g‖²]`.
fn stratum_variance(size: usize, k: usize, sum: &[f64], sq: f64) -> f64 {
    if size <= 1 || k == 0 {
        return 0.0;
    }
    let (s, k) = (size as f64, k as f64);
    k / (s * (s - 1.0)) * (1.0 - k / s) * (s * sq - norm_sq(sum))
}

/// Closed-form SRS moments: the mean is the full gradient and
/// `V = (1/(mN(N−1))) (1 − m/N) [N Σ‖g_i‖² − ‖Σ g_i‖²]`.
pub fn analytic_moments_srs(gradients: &[GradientVector], m: usize) -> Result<MomentReport> {
    check_gradients(gradients)?;
    let n = gradients.len();
    if m == 0 || m > n {
        return Err(Error::domain(format!("batch size {m} must lie in 1..={n}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let (sum, sq) = stratum_sums(gradients, &all);
    let mut mean = GradientVector::zeros(gradients[0].segments().to_vec());
    mean.add_scaled(1.0 / n as f64, &with_layout(sum.clone(), gradients))?;
    // the SRS formula is the single-stratum case with k = m, scaled by 1/m²
    let variance = stratum_variance(n, m, &sum, sq) / (m * m) as f64;
    Ok(MomentReport::new(mean, variance, MomentMethod::AnalyticSrs))
}

/// Stratified (typicality) moments for an arbitrary partition:
/// mean `Σ_s (n_s/(N_s m)) Σ_{i∈s} g_i`, variance the sum over strata of
/// `(1/m²) n_s/(N_s(N_s−1)) (1 − n_s/N_s) [N_s Σ‖g‖² − ‖Σ g‖²]`.
///
/// When `Σ_{j∈L} g_j = 0` these reduce to the mean `(n1 N/(N1 m)) ∇J` and
/// to the `L` term without its `‖Σ g‖²` part; see [`ts_closed_form`].
pub fn analytic_moments_ts(gradients: &[GradientVector], partition: &Partition) -> Result<MomentReport> {
    check_gradients(gradients)?;
    check_partition(gradients, partition)?;
    let m = partition.batch_size() as f64;
    let mut mean = vec![0.0; gradients[0].len()];
    let mut variance = 0.0;
    let mut l_sum_sq = 0.0;
    for (stratum, k, is_l) in [
        (&partition.h_indices, partition.n1, false),
        (&partition.l_indices, partition.n2, true),
    ] {
        if stratum.is_empty() {
            continue;
        }
        let (sum, sq) = stratum_sums(gradients, stratum);
        axpy(k as f64 / (stratum.len() as f64 * m), &sum, &mut mean);
        variance += stratum_variance(stratum.len(), k, &sum, sq) / (m * m);
        if is_l {
            l_sum_sq = norm_sq(&sum);
        }
    }
    let mut report = MomentReport::new(with_layout(mean, gradients), variance, MomentMethod::AnalyticTs);
    let scale: f64 = gradients
        .iter()
        .map(GradientVector::norm_sq)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    report.def2_violated = l_sum_sq > 1e-24 * scale;
    Ok(report)
}

/// The typicality moments in the form that assumes `Σ_{j∈L} g_j = 0`:
/// mean `(n1 N/(N1 m)) ∇J` and variance
/// `(1/m²)(n1/(N1(N1−1)))(1−n1/N1)[N1 Σ_H‖g‖² − ‖Σ_H g‖²]
///  + (1/m²)(n2/(N2(N2−1)))(1−n2/N2)[N2 Σ_L‖g‖²]`.
/// Only meaningful when the partition's residual is zero.
pub fn ts_closed_form(gradients: &[GradientVector], partition: &Partition) -> Result<(GradientVector, f64)> {
    check_gradients(gradients)?;
    check_partition(gradients, partition)?;
    let n = gradients.len() as f64;
    let m = partition.batch_size() as f64;
    let n_h = partition.h_indices.len();
    let all: Vec<usize> = (0..gradients.len()).collect();
    let (total, _) = stratum_sums(gradients, &all);
    let mut mean = vec![0.0; total.len()];
    axpy(partition.n1 as f64 * n / (n_h as f64 * m) / n, &total, &mut mean);

    let (h_sum, h_sq) = stratum_sums(gradients, &partition.h_indices);
    let mut variance = stratum_variance(n_h, partition.n1, &h_sum, h_sq) / (m * m);
    let n_l = partition.l_indices.len();
    if n_l > 1 && partition.n2 > 0 {
        let (_, l_sq) = stratum_sums(gradients, &partition.l_indices);
        let (s, k) = (n_l as f64, partition.n2 as f64);
        variance += k / (s * (s - 1.0)) * (1.0 - k / s) * (s * l_sq) / (m * m);
    }
    Ok((with_layout(mean, gradients), variance))
}

fn with_layout(values: Vec<f64>, like: &[GradientVector]) -> GradientVector {
    GradientVector::new(values, like[0].segments().to_vec()).expect("layout copied from input")
}

/// Visits every equally likely batch of `sampler`, passing the batch mean.
fn for_each_batch_mean(gradients: &[GradientVector], sampler: &Sampler, mut f: impl FnMut(&[f64])) {
    let dim = gradients[0].len();
    let mut buf = vec![0.0; dim];
    match sampler {
        Sampler::Srs { n_total, m } => {
            let inv = 1.0 / *m as f64;
            for_each_combination(*n_total, *m, |batch| {
                buf.iter_mut().for_each(|b| *b = 0.0);
                for &i in batch {
                    axpy(inv, gradients[i].values(), &mut buf);
                }
                f(&buf);
            });
        }
        Sampler::Typicality(p) => {
            let inv = 1.0 / p.batch_size() as f64;
            let mut h_part = vec![0.0; dim];
            for_each_combination(p.h_indices.len(), p.n1, |hb| {
                h_part.iter_mut().for_each(|b| *b = 0.0);
                for &k in hb {
                    axpy(inv, gradients[p.h_indices[k]].values(), &mut h_part);
                }
                for_each_combination(p.l_indices.len(), p.n2, |lb| {
                    buf.copy_from_slice(&h_part);
                    for &k in lb {
                        axpy(inv, gradients[p.l_indices[k]].values(), &mut buf);
                    }
                    f(&buf);
                });
            });
        }
    }
}

fn check_sampler(gradients: &[GradientVector], sampler: &Sampler) -> Result<()> {
    if sampler.population() != gradients.len() {
        return Err(Error::shape(format!(
            "sampler population {} does not match {} gradients",
            sampler.population(),
            gradients.len()
        )));
    }
    match sampler {
        Sampler::Srs { n_total, m } => {
            if *m == 0 || m > n_total {
                return Err(Error::domain(format!("batch size {m} must lie in 1..={n_total}")));
            }
            Ok(())
        }
        Sampler::Typicality(p) => check_partition(gradients, p),
    }
}

/// Exact moments by visiting every batch (two passes: mean, then spread).
pub fn enumerate_moments(gradients: &[GradientVector], sampler: &Sampler) -> Result<MomentReport> {
    check_gradients(gradients)?;
    check_sampler(gradients, sampler)?;
    let count = sampler.batch_count();
    if count > ENUMERATION_LIMIT {
        return Err(Error::Capability(format!(
            "{count} batches exceed the enumeration limit of {ENUMERATION_LIMIT}"
        )));
    }
    let mut mean = vec![0.0; gradients[0].len()];
    let mut visited = 0usize;
    for_each_batch_mean(gradients, sampler, |b| {
        axpy(1.0, b, &mut mean);
        visited += 1;
    });
    mean.iter_mut().for_each(|v| *v /= visited as f64);
    let mut spread = 0.0;
    for_each_batch_mean(gradients, sampler, |b| spread += sq_dist(b, &mean));
    let mut report = MomentReport::new(
        with_layout(mean, gradients),
        spread / visited as f64,
        MomentMethod::Enumeration,
    );
    if let Sampler::Typicality(p) = sampler {
        report.def2_violated = p.residual(gradients)? > 0.0;
    }
    Ok(report)
}

fn batch_mean_into(gradients: &[GradientVector], indices: &[usize], buf: &mut [f64]) {
    // canonical summation order, so equal batches give bit-equal means
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    buf.iter_mut().for_each(|b| *b = 0.0);
    let inv = 1.0 / sorted.len() as f64;
    for &i in &sorted {
        axpy(inv, gradients[i].values(), buf);
    }
}

/// Sample mean and unbiased sample variance of the batch gradient over
/// `draws` seeded batch draws.
pub fn monte_carlo_moments_from_gradients(
    gradients: &[GradientVector],
    sampler: &Sampler,
    draws: usize,
    seed: u64,
) -> Result<MomentReport> {
    check_gradients(gradients)?;
    check_sampler(gradients, sampler)?;
    if draws < 2 {
        return Err(Error::domain(format!("need at least 2 draws, got {draws}")));
    }
    let dim = gradients[0].len();
    let mut buf = vec![0.0; dim];
    // pass 1: mean; pass 2 replays the same draws for the spread
    let mut mean = vec![0.0; dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let b = sampler.draw_with(&mut rng)?;
        batch_mean_into(gradients, &b.indices, &mut buf);
        axpy(1.0, &buf, &mut mean);
    }
    mean.iter_mut().for_each(|v| *v /= draws as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = draws as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let b = sampler.draw_with(&mut rng)?;
        batch_mean_into(gradients, &b.indices, &mut buf);
        let v = sq_dist(&buf, &mean) * d / (d - 1.0);
        s1 += v;
        s2 += v * v;
    }
    let variance = s1 / d;
    let spread = ((s2 / d - variance * variance).max(0.0) * d / (d - 1.0)).sqrt();
    let mut report = MomentReport::new(with_layout(mean, gradients), variance, MomentMethod::MonteCarlo);
    report.draw_count = Some(draws);
    report.variance_stderr = Some(spread / d.sqrt());
    Ok(report)
}

/// Monte-Carlo moments at the network's current parameters.
pub fn monte_carlo_moments(
    state: &NetworkState,
    dataset: &Dataset,
    sampler: &Sampler,
    draws: usize,
    seed: u64,
) -> Result<MomentReport> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let gradients = state.per_sample_gradients(dataset, &all)?;
    monte_carlo_moments_from_gradients(&gradients, sampler, draws, seed)
}
