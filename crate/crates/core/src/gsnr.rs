//! Gradient signal-to-noise ratio of the minibatch gradient at fixed
//! parameters: `‖E ĝ‖ / sqrt(E‖ĝ − E ĝ‖²)`, the spread taken over batch
//! resampling.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{GradientVector, LayerFilter, NetworkState};
use crate::sampling::{
    analytic_moments_srs, analytic_moments_ts, enumerate_moments, monte_carlo_moments_from_gradients, MomentReport,
    Partition, Sampler,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GsnrValue {
    Finite(f64),
    /// Zero spread with a nonzero mean.
    Infinite,
    /// Zero spread and zero mean (0/0).
    Undefined,
}

impl GsnrValue {
    pub fn from_parts(mean_norm: f64, std: f64) -> Self {
        if std > 0.0 {
            GsnrValue::Finite(mean_norm / std)
        } else if mean_norm > 0.0 {
            GsnrValue::Infinite
        } else {
            GsnrValue::Undefined
        }
    }

    /// `+inf` for infinite, NaN for undefined.
    pub fn as_f64(self) -> f64 {
        match self {
            GsnrValue::Finite(v) => v,
            GsnrValue::Infinite => f64::INFINITY,
            GsnrValue::Undefined => f64::NAN,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            GsnrValue::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl std::fmt::Display for GsnrValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GsnrValue::Finite(v) => write!(f, "{v}"),
            GsnrValue::Infinite => f.write_str("inf"),
            GsnrValue::Undefined => f.write_str("nan"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GsnrMethod {
    Analytic,
    Enumeration,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsnrPoint {
    pub epoch: usize,
    pub layer: LayerFilter,
    pub mean_norm: f64,
    pub std: f64,
    pub gsnr: GsnrValue,
    pub sampler: &'static str,
    /// Delta-method standard error of the GSNR (Monte-Carlo only).
    pub stderr: Option<f64>,
}

/// Per-sample gradients cut down to one layer (or passed through whole).
pub fn restrict(gradients: &[GradientVector], filter: LayerFilter) -> Result<Vec<GradientVector>> {
    match filter {
        LayerFilter::Whole => Ok(gradients.to_vec()),
        LayerFilter::Layer(_) => gradients
            .iter()
            .map(|g| Ok(GradientVector::from_values(g.select(filter)?.to_vec())))
            .collect(),
    }
}

pub fn moments(gradients: &[GradientVector], sampler: &Sampler, method: GsnrMethod) -> Result<MomentReport> {
    match (method, sampler) {
        (GsnrMethod::Analytic, Sampler::Srs { m, .. }) => analytic_moments_srs(gradients, *m),
        (GsnrMethod::Analytic, Sampler::Typicality(p)) => analytic_moments_ts(gradients, p),
        (GsnrMethod::Enumeration, s) => enumerate_moments(gradients, s),
        (GsnrMethod::MonteCarlo { draws, seed }, s) => monte_carlo_moments_from_gradients(gradients, s, draws, seed),
    }
}

fn point_from_report(report: &MomentReport, filter: LayerFilter, sampler: &Sampler) -> GsnrPoint {
    let mean_norm = report.mean.norm();
    let gsnr = GsnrValue::from_parts(mean_norm, report.std);
    let stderr = match (report.draw_count, report.variance_stderr, gsnr) {
        (Some(d), Some(var_se), GsnrValue::Finite(v)) if mean_norm > 0.0 => {
            let se_mean = (report.variance / d as f64).sqrt();
            let se_std = var_se / (2.0 * report.std);
            Some(v * ((se_mean / mean_norm).powi(2) + (se_std / report.std).powi(2)).sqrt())
        }
        _ => None,
    };
    GsnrPoint {
        epoch: 0,
        layer: filter,
        mean_norm,
        std: report.std,
        gsnr,
        sampler: sampler.name(),
        stderr,
    }
}

/// GSNR of `sampler`'s batch gradient from precomputed per-sample gradients.
pub fn gsnr_of_gradients(
    gradients: &[GradientVector],
    sampler: &Sampler,
    filter: LayerFilter,
    method: GsnrMethod,
) -> Result<GsnrPoint> {
    let restricted = restrict(gradients, filter)?;
    let report = moments(&restricted, sampler, method)?;
    Ok(point_from_report(&report, filter, sampler))
}

/// GSNR at the network's current parameters over the whole dataset.
pub fn gsnr_at(
    state: &NetworkState,
    dataset: &Dataset,
    sampler: &Sampler,
    filter: LayerFilter,
    method: GsnrMethod,
) -> Result<GsnrPoint> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let gradients = state.per_sample_gradients(dataset, &all)?;
    gsnr_of_gradients(&gradients, sampler, filter, method)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Check {
    pub gsnr_ts: GsnrValue,
    pub gsnr_srs: GsnrValue,
    /// `None` when either ratio is undefined.
    pub holds: Option<bool>,
    /// The density hypothesis `n1/|H| >= m/N` fails, so no ordering is claimed.
    pub vacuous: bool,
    pub tolerance: f64,
}

/// Compares TS against SRS with the same batch size. Exact methods use zero
/// tolerance; Monte-Carlo allows three pooled standard errors.
pub fn verify_theorem1(
    gradients: &[GradientVector],
    partition: &Partition,
    filter: LayerFilter,
    method: GsnrMethod,
) -> Result<Theorem1Check> {
    let n = gradients.len();
    let m = partition.batch_size();
    let srs = Sampler::srs(n, m)?;
    let ts = Sampler::Typicality(partition.clone());
    let srs_method = match method {
        // independent draws for the two samplers
        GsnrMethod::MonteCarlo { draws, seed } => GsnrMethod::MonteCarlo {
            draws,
            seed: seed ^ 0x9e37_79b9_7f4a_7c15,
        },
        other => other,
    };
    let p_ts = gsnr_of_gradients(gradients, &ts, filter, method)?;
    let p_srs = gsnr_of_gradients(gradients, &srs, filter, srs_method)?;
    let tolerance = match method {
        GsnrMethod::MonteCarlo { .. } => {
            let a = p_ts.stderr.unwrap_or(0.0);
            let b = p_srs.stderr.unwrap_or(0.0);
            3.0 * (a * a + b * b).sqrt()
        }
        _ => 0.0,
    };
    let holds = match (p_ts.gsnr, p_srs.gsnr) {
        (GsnrValue::Undefined, _) | (_, GsnrValue::Undefined) => None,
        (GsnrValue::Infinite, _) => Some(true),
        (GsnrValue::Finite(_), GsnrValue::Infinite) => Some(false),
        (GsnrValue::Finite(t), GsnrValue::Finite(s)) => Some(t >= s - tolerance),
    };
    Ok(Theorem1Check {
        gsnr_ts: p_ts.gsnr,
        gsnr_srs: p_srs.gsnr,
        holds,
        vacuous: !partition.density_ok,
        tolerance,
    })
}

/// Exact condition for `GSNR_TS >= GSNR_SRS` when `Σ_L g = 0` and both strata
/// have the same mean squared norm `a`: with `q = ‖∇J‖² / a`, the ordering
/// holds iff `slope * q >= offset`. Only the four sizes enter, so the density
/// condition alone does not decide it: near stationary points (small `q`)
/// typicality sampling can be noisier than simple random sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingCondition {
    pub slope: f64,
    pub offset: f64,
}

impl OrderingCondition {
    pub fn new(n_h: usize, n_l: usize, n1: usize, n2: usize) -> Result<Self> {
        let n = n_h + n_l;
        let m = n1 + n2;
        if n1 == 0 || n1 > n_h || n2 > n_l || m >= n {
            return Err(Error::domain(format!(
                "sizes |H|={n_h}, |L|={n_l}, n1={n1}, n2={n2} need 1 <= n1 <= |H|, n2 <= |L|, m < N"
            )));
        }
        let (nf, mf) = (n as f64, m as f64);
        let fpc = |k: usize, big: usize| {
            if big <= 1 {
                0.0
            } else {
                let (k, big) = (k as f64, big as f64);
                k * (big - k) / (big * big * (big - 1.0))
            }
        };
        let (a1, a2) = (fpc(n1, n_h), fpc(n2, n_l));
        let (nh, nl) = (n_h as f64, n_l as f64);
        let k = n1 as f64 * nf / (nh * mf);
        // k² V_srs / a and V_ts / a, each affine in q
        let c = k * k * (1.0 - mf / nf) * nf / (mf * (nf - 1.0));
        let r0 = (a1 * nh * nh + a2 * nl * nl) / (mf * mf);
        let b = a1 * nf * nf / (mf * mf);
        Ok(OrderingCondition {
            slope: b - c,
            offset: r0 - c,
        })
    }

    pub fn holds(&self, q: f64) -> bool {
        self.slope * q >= self.offset
    }

    /// `slope * q - offset`, in units of the mean squared norm.
    pub fn margin(&self, q: f64) -> f64 {
        self.slope * q - self.offset
    }
}

/// Average squared gradient norm in each stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub epoch: usize,
    pub layer: LayerFilter,
    pub avg_sq_norm_h: f64,
    pub avg_sq_norm_l: f64,
    /// `avg_sq_norm_h / avg_sq_norm_l`; `None` when degenerate.
    pub ratio: Option<f64>,
    /// Either stratum has all-zero gradients.
    pub degenerate: bool,
}

impl AssumptionReport {
    pub fn within(&self, low: f64, high: f64) -> bool {
        self.ratio.is_some_and(|r| (low..=high).contains(&r))
    }
}

pub fn check_assumption1(
    gradients: &[GradientVector],
    partition: &Partition,
    filter: LayerFilter,
) -> Result<AssumptionReport> {
    if partition.l_indices.is_empty() {
        return Err(Error::domain("stratum balance needs a nonempty L"));
    }
    if partition.population() != gradients.len() {
        return Err(Error::shape("partition and gradient count differ"));
    }
    let avg = |idx: &[usize]| -> Result<f64> {
        let mut s = 0.0;
        for &i in idx {
            let v = gradients[i].select(filter)?;
            s += crate::linalg::norm_sq(v);
        }
        Ok(s / idx.len() as f64)
    };
    let h = avg(&partition.h_indices)?;
    let l = avg(&partition.l_indices)?;
    let degenerate = h == 0.0 || l == 0.0;
    Ok(AssumptionReport {
        epoch: partition.built_at_epoch,
        layer: filter,
        avg_sq_norm_h: h,
        avg_sq_norm_l: l,
        ratio: (!degenerate).then(|| h / l),
        degenerate,
    })
}

/// Whole-network report followed by one per layer.
pub fn check_assumption1_layers(gradients: &[GradientVector], partition: &Partition) -> Result<Vec<AssumptionReport>> {
    let layers = gradients.first().map_or(0, GradientVector::layer_count);
    std::iter::once(LayerFilter::Whole)
        .chain((1..=layers).map(LayerFilter::Layer))
        .map(|f| check_assumption1(gradients, partition, f))
        .collect()
}

/// Squared norms recorded at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheckpoint {
    pub per_sample_sq_norms: Vec<f64>,
    pub full_sq_norm: f64,
}

impl GrowthCheckpoint {
    pub fn from_gradients(per_sample: &[GradientVector], full: &GradientVector) -> Self {
        GrowthCheckpoint {
            per_sample_sq_norms: per_sample.iter().map(GradientVector::norm_sq).collect(),
            full_sq_norm: full.norm_sq(),
        }
    }
}

/// Constants of the bound `‖g_i‖² <= beta1 + beta2 ‖∇J‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub checkpoints_used: usize,
}

/// `beta2 = max(1, max ‖g_i‖²/‖∇J‖²)` over checkpoints with a nonzero full
/// gradient, then the smallest `beta1 >= 0` making the bound hold everywhere.
pub fn estimate_growth_constants(trajectory: &[GrowthCheckpoint]) -> Result<GrowthConstants> {
    if trajectory.is_empty() {
        return Err(Error::domain("growth constants need at least one checkpoint"));
    }
    let beta2 = trajectory
        .iter()
        .filter(|c| c.full_sq_norm > 0.0)
        .flat_map(|c| c.per_sample_sq_norms.iter().map(move |&s| s / c.full_sq_norm))
        .fold(1.0, f64::max);
    let beta1 = trajectory
        .iter()
        .flat_map(|c| c.per_sample_sq_norms.iter().map(move |&s| s - beta2 * c.full_sq_norm))
        .fold(0.0, f64::max);
    Ok(GrowthConstants {
        beta1,
        beta2,
        checkpoints_used: trajectory.len(),
    })
}

/// Number of `(checkpoint, sample)` pairs breaking the bound, allowing
/// relative round-off of 1e-12.
pub fn growth_violations(constants: &GrowthConstants, trajectory: &[GrowthCheckpoint]) -> usize {
    trajectory
        .iter()
        .flat_map(|c| {
            let bound = constants.beta1 + constants.beta2 * c.full_sq_norm;
            c.per_sample_sq_norms
                .iter()
                .filter(move |&&s| s > bound * (1.0 + 1e-12) + 1e-300)
        })
        .count()
}
