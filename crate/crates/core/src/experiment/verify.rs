use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SamplerKind};
use super::train::train;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::gsnr::{
    check_assumption1, estimate_growth_constants, verify_theorem1, GrowthCheckpoint, GsnrMethod, OrderingCondition,
};
use crate::linalg::Matrix;
use crate::nn::{GradientVector, HiddenActivation, LayerFilter, NetworkSpec, NetworkState};
use crate::sampling::{analytic_moments_srs, analytic_moments_ts, enumerate_moments, MomentReport, Partition, Sampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    MomentsOracle,
    Theorem1,
    Assumption1,
    Growth,
    GradCheck,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::MomentsOracle,
        Suite::Theorem1,
        Suite::Assumption1,
        Suite::Growth,
        Suite::GradCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::MomentsOracle => "moments-oracle",
            Suite::Theorem1 => "theorem1",
            Suite::Assumption1 => "assumption1",
            Suite::Growth => "growth",
            Suite::GradCheck => "grad-check",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.as_str()).collect();
            Error::config(format!("unknown suite {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Runs a suite on its built-in instances, or, for `assumption1` and
/// `growth`, on a training run of `config` when one is given.
pub fn run_verify(suite: Suite, config: Option<&ExperimentConfig>) -> Result<VerifyReport> {
    let checks = match suite {
        Suite::MomentsOracle => moments_oracle()?,
        Suite::Theorem1 => theorem1()?,
        Suite::Assumption1 => match config {
            Some(c) => assumption1_run(c)?,
            None => assumption1_builtin()?,
        },
        Suite::Growth => match config {
            Some(c) => growth_run(c)?,
            None => growth_builtin()?,
        },
        Suite::GradCheck => grad_check()?,
    };
    Ok(VerifyReport {
        suite,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn scalars(v: &[f64]) -> Vec<GradientVector> {
    v.iter().map(|&x| GradientVector::from_values(vec![x])).collect()
}

fn random_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<GradientVector> {
    (0..n)
        .map(|_| GradientVector::from_values((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()))
        .collect()
}

/// Largest relative discrepancy between two moment reports; `scale` floors
/// the denominators so exact zeros compare against the problem's magnitude.
fn discrepancy(a: &MomentReport, b: &MomentReport, scale: f64) -> f64 {
    let floor = 1e-3 * scale;
    let mean_diff: f64 = a
        .mean
        .values()
        .iter()
        .zip(b.mean.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let mean_rel = mean_diff / b.mean.norm().max(floor);
    let var_rel = (a.variance - b.variance).abs() / b.variance.abs().max(floor);
    mean_rel.max(var_rel)
}

fn random_partition(rng: &mut ChaCha8Rng, n: usize) -> Result<Partition> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let h_size = rng.random_range(1..n);
    let (h, l) = order.split_at(h_size);
    let n1 = rng.random_range(1..=h.len().min(4));
    let n2 = rng.random_range(0..=l.len().min(4 - n1));
    Partition::new(h.to_vec(), l.to_vec(), n1, n2)
}

fn moments_oracle() -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let g = scalars(&[1.0, 2.0, 3.0, 6.0]);
    let v = analytic_moments_srs(&g, 2)?.variance;
    checks.push(Check::new(
        "srs [1,2,3,6], m=2: variance 7/6",
        (v - 7.0 / 6.0).abs() < 1e-12,
        format!("variance {v}"),
    ));

    let g = scalars(&[4.0, 8.0, 3.0, -3.0]);
    let p = Partition::new(vec![0, 1], vec![2, 3], 1, 1)?;
    let r = analytic_moments_ts(&g, &p)?;
    checks.push(Check::new(
        "ts [4,8,3,-3], H={0,1}: mean 3, variance 13/4",
        (r.mean.values()[0] - 3.0).abs() < 1e-12 && (r.variance - 3.25).abs() < 1e-12,
        format!("mean {}, variance {}", r.mean.values()[0], r.variance),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut worst_srs, mut worst_ts) = (0.0f64, 0.0f64);
    let instances = 100;
    for _ in 0..instances {
        let n = rng.random_range(2..=8);
        let dim = rng.random_range(1..=3);
        let g = random_vectors(&mut rng, n, dim);
        let scale = g.iter().map(GradientVector::norm_sq).sum::<f64>() / n as f64;
        let m = rng.random_range(1..=n.min(4));
        let srs = Sampler::srs(n, m)?;
        worst_srs = worst_srs.max(discrepancy(
            &analytic_moments_srs(&g, m)?,
            &enumerate_moments(&g, &srs)?,
            scale,
        ));
        let p = random_partition(&mut rng, n)?;
        let analytic = analytic_moments_ts(&g, &p)?;
        worst_ts = worst_ts.max(discrepancy(
            &analytic,
            &enumerate_moments(&g, &Sampler::Typicality(p))?,
            scale,
        ));
    }
    checks.push(Check::new(
        format!("srs analytic vs enumeration, {instances} random instances"),
        worst_srs < 1e-10,
        format!("worst relative error {worst_srs:e}"),
    ));
    checks.push(Check::new(
        format!("ts analytic vs enumeration, {instances} random instances"),
        worst_ts < 1e-10,
        format!("worst relative error {worst_ts:e}"),
    ));
    Ok(checks)
}

/// Gradients and a partition with `Σ_L g = 0`, equal stratum mean squared
/// norms, and `n1/|H| >= m/N`.
pub(crate) fn balanced_instance(rng: &mut ChaCha8Rng) -> Result<(Vec<GradientVector>, Partition)> {
    let h_size = rng.random_range(1..=5);
    let l_size = rng.random_range(2..=6);
    let n = h_size + l_size;
    let dim = rng.random_range(1..=4);
    let h = random_vectors(rng, h_size, dim);
    let mut l = random_vectors(rng, l_size - 1, dim);
    let mut last = vec![0.0; dim];
    for g in &l {
        crate::linalg::axpy(-1.0, g.values(), &mut last);
    }
    l.push(GradientVector::from_values(last));
    let avg = |v: &[GradientVector]| v.iter().map(GradientVector::norm_sq).sum::<f64>() / v.len() as f64;
    let c = (avg(&h) / avg(&l)).sqrt();
    for g in &mut l {
        g.scale(c);
    }
    // strata interleaved by a random permutation
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut grads = vec![GradientVector::from_values(vec![0.0; dim]); n];
    for (k, g) in h.into_iter().chain(l).enumerate() {
        grads[order[k]] = g;
    }
    let n1 = rng.random_range(1..=h_size);
    let n2_max = (n1 * l_size / h_size).min(l_size);
    let n2 = rng.random_range(0..=n2_max);
    let p = Partition::with_gradients(order[..h_size].to_vec(), order[h_size..].to_vec(), n1, n2, &grads)?;
    Ok((grads, p))
}

fn theorem1() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let g = scalars(&[4.0, 8.0, 3.0, -3.0]);
    let p = Partition::with_gradients(vec![0, 1], vec![2, 3], 1, 1, &g)?;
    let c = verify_theorem1(&g, &p, LayerFilter::Whole, GsnrMethod::Analytic)?;
    let (ts, srs) = (c.gsnr_ts.as_f64(), c.gsnr_srs.as_f64());
    checks.push(Check::new(
        "worked instance [4,8,3,-3]",
        c.holds == Some(true)
            && (ts - 3.0 / 3.25f64.sqrt()).abs() < 1e-12
            && (srs - 3.0 / (31.0f64 / 6.0).sqrt()).abs() < 1e-12,
        format!("gsnr_ts {ts:.4}, gsnr_srs {srs:.4}"),
    ));

    let g = scalars(&[7.0, -1.0, 5.0, -5.0]);
    let p = Partition::with_gradients(vec![0, 1], vec![2, 3], 1, 1, &g)?;
    let c = verify_theorem1(&g, &p, LayerFilter::Whole, GsnrMethod::Enumeration)?;
    checks.push(Check::new(
        "balanced counterexample [7,-1,5,-5] is flagged",
        c.holds == Some(false) && !c.vacuous,
        format!(
            "gsnr_ts {:.4} < gsnr_srs {:.4} with zero residual, equal mean squares and n1/|H| = m/N",
            c.gsnr_ts.as_f64(),
            c.gsnr_srs.as_f64()
        ),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(0x7e0);
    let instances = 200;
    let (mut mismatches, mut reversed, mut checked) = (Vec::new(), 0, 0);
    for k in 0..instances {
        let (g, p) = balanced_instance(&mut rng)?;
        if p.batch_size() == g.len() {
            continue;
        }
        let c = verify_theorem1(&g, &p, LayerFilter::Whole, GsnrMethod::Enumeration)?;
        let cond = OrderingCondition::new(p.h_indices.len(), p.l_indices.len(), p.n1, p.n2)?;
        let a = g.iter().map(GradientVector::norm_sq).sum::<f64>() / g.len() as f64;
        let q = GradientVector::mean(&g)?.norm_sq() / a;
        if cond.margin(q).abs() < 1e-9 {
            continue;
        }
        checked += 1;
        if c.holds != Some(true) {
            reversed += 1;
        }
        if c.holds != Some(cond.holds(q)) {
            mismatches.push(k);
        }
    }
    checks.push(Check::new(
        format!("exact ordering condition vs enumeration, {checked} balanced instances"),
        mismatches.is_empty(),
        format!("mismatches {mismatches:?}; {reversed} instances have gsnr_ts < gsnr_srs"),
    ));
    Ok(checks)
}

fn assumption1_builtin() -> Result<Vec<Check>> {
    let g = scalars(&[2.0, 1.0, 3f64.sqrt()]);
    let p = Partition::new(vec![0], vec![1, 2], 1, 1)?;
    let r = check_assumption1(&g, &p, LayerFilter::Whole)?;
    let copies = vec![GradientVector::from_values(vec![0.3, -1.0]); 4];
    let q = Partition::new(vec![0, 1], vec![2, 3], 1, 1)?;
    let s = check_assumption1(&copies, &q, LayerFilter::Whole)?;
    Ok(vec![
        Check::new(
            "g_H=[2], g_L=[1,sqrt 3]: ratio 2",
            r.ratio.is_some_and(|v| (v - 2.0).abs() < 1e-12),
            format!("{:?}", r.ratio),
        ),
        Check::new(
            "identical strata: ratio 1",
            s.ratio == Some(1.0),
            format!("{:?}", s.ratio),
        ),
    ])
}

/// Fraction of checkpoints in the first third of training whose per-layer
/// ratio lies in `[0.5, 2]`, for each layer.
pub(crate) fn early_ratio_fractions(rows: &[super::GsnrRow], epochs: usize) -> Vec<(usize, f64, usize)> {
    let cutoff = epochs / 3;
    let mut layers: Vec<usize> = rows
        .iter()
        .filter_map(|r| match r.layer {
            LayerFilter::Layer(k) => Some(k),
            LayerFilter::Whole => None,
        })
        .collect();
    layers.sort_unstable();
    layers.dedup();
    layers
        .into_iter()
        .map(|k| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.layer == LayerFilter::Layer(k) && r.epoch <= cutoff)
                .filter_map(|r| r.ratio_h_l)
                .collect();
            let inside = vals.iter().filter(|v| (0.5..=2.0).contains(*v)).count();
            let frac = if vals.is_empty() {
                0.0
            } else {
                inside as f64 / vals.len() as f64
            };
            (k, frac, vals.len())
        })
        .collect()
}

fn assumption1_run(config: &ExperimentConfig) -> Result<Vec<Check>> {
    if config.sampler.kind != SamplerKind::Ts {
        return Err(Error::config("the assumption1 suite needs a ts sampler config"));
    }
    let out = train(config)?;
    Ok(early_ratio_fractions(&out.gsnr, config.optimizer.epochs)
        .into_iter()
        .map(|(k, frac, n)| {
            Check::new(
                format!("layer {k}: ratio in [0.5, 2] at >= 90% of early checkpoints"),
                n > 0 && frac >= 0.9,
                format!("{:.1}% of {n}", 100.0 * frac),
            )
        })
        .collect())
}

fn growth_builtin() -> Result<Vec<Check>> {
    let equal = GrowthCheckpoint {
        per_sample_sq_norms: vec![4.0, 4.0, 4.0],
        full_sq_norm: 4.0,
    };
    let a = estimate_growth_constants(std::slice::from_ref(&equal))?;
    let spread = GrowthCheckpoint {
        per_sample_sq_norms: vec![1.0, 9.0],
        full_sq_norm: 4.0,
    };
    let b = estimate_growth_constants(std::slice::from_ref(&spread))?;
    Ok(vec![
        Check::new(
            "all equal to the full gradient",
            a.beta1 == 0.0 && a.beta2 == 1.0,
            format!("{a:?}"),
        ),
        Check::new(
            "norms {1, 9}, full 4",
            b.beta1 == 0.0 && b.beta2 == 2.25,
            format!("{b:?}"),
        ),
    ])
}

fn growth_run(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let mut c = config.clone();
    c.instrumentation.growth = true;
    let out = train(&c)?;
    let Some(g) = out.growth else {
        return Err(Error::config("the growth suite needs a nonempty gsnr schedule"));
    };
    Ok(vec![Check::new(
        "replayed bound has no violations",
        g.violations == 0 && g.constants.beta2 >= 1.0 && g.constants.beta1 >= 0.0,
        format!(
            "beta1 {}, beta2 {}, violations {}",
            g.constants.beta1, g.constants.beta2, g.violations
        ),
    )])
}

fn random_dataset(rng: &mut ChaCha8Rng, rows: usize, dim: usize, classes: usize) -> Result<Dataset> {
    let x: Vec<f64> = (0..rows * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<usize> = (0..rows).map(|i| i % classes).collect();
    Dataset::new(Matrix::from_vec(rows, dim, x)?, y, classes, Split::Train, "random")
}

fn finite_difference(state: &NetworkState, data: &Dataset, idx: &[usize], h: f64) -> Result<Vec<f64>> {
    let base = state.params().to_vec();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        let up = NetworkState::from_flat(state.spec(), p.clone(), 0)?.loss(data, idx)?;
        p[i] = base[i] - h;
        let down = NetworkState::from_flat(state.spec(), p, 0)?.loss(data, idx)?;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn grad_check() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9c);
    let shapes: [(&[usize], bool); 5] = [
        (&[4, 3, 2], false),
        (&[4, 3, 1], true),
        (&[3, 5, 4, 3], false),
        (&[2, 6, 1], true),
        (&[5, 4, 4, 2], false),
    ];
    let mut worst = 0.0f64;
    let mut nets = 0;
    for (widths, binary) in shapes {
        for hidden in [HiddenActivation::Tanh, HiddenActivation::Relu] {
            for _ in 0..2 {
                let spec = if binary {
                    NetworkSpec::binary(widths.to_vec(), hidden)?
                } else {
                    NetworkSpec::multiclass(widths.to_vec(), hidden)?
                };
                let classes = spec.class_count();
                // random biases too: zero biases put dead relu paths exactly on the kink
                let params: Vec<f64> = (0..spec.param_count())
                    .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let state = NetworkState::from_flat(&spec, params, 0)?;
                let data = random_dataset(&mut rng, 6, widths[0], classes)?;
                let idx: Vec<usize> = (0..data.len()).collect();
                let analytic = state.batch_gradient(&data, &idx)?;
                let numeric = finite_difference(&state, &data, &idx, 1e-6)?;
                let diff: f64 = analytic
                    .values()
                    .iter()
                    .zip(&numeric)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let scale = analytic.norm().max(crate::linalg::norm_sq(&numeric).sqrt()).max(1e-12);
                worst = worst.max(diff / scale);
                nets += 1;
            }
        }
    }
    Ok(vec![Check::new(
        format!("backprop vs central differences on {nets} random nets"),
        worst < 1e-4,
        format!("worst relative error {worst:e}"),
    )])
}
