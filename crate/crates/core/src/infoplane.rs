//! Mutual information between the input, each hidden layer and the label.
//!
//! The binning estimator discretizes every neuron into uniform cells and uses
//! plug-in entropies (bits). The mixture estimator treats the hidden layer as
//! its noise-free activations plus isotropic Gaussian noise and uses the
//! pairwise-distance upper bound (nats).

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sq_dist, Matrix};
use crate::nn::{HiddenActivation, NetworkState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiEstimatorKind {
    Binning,
    GaussianMixtureUpper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiUnit {
    Bits,
    Nats,
}

impl MiUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            MiUnit::Bits => "bits",
            MiUnit::Nats => "nats",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiEstimatorSpec {
    pub kind: MiEstimatorKind,
    pub bin_count: usize,
    pub noise_std: f64,
    /// Binning range for tanh layers.
    pub tanh_range: (f64, f64),
    /// Relu layers are binned over `[0, q]`, `q` this percentile of the
    /// layer's activations.
    pub relu_percentile: f64,
}

impl Default for MiEstimatorSpec {
    fn default() -> Self {
        MiEstimatorSpec {
            kind: MiEstimatorKind::Binning,
            bin_count: 30,
            noise_std: 0.1,
            tanh_range: (-1.0, 1.0),
            relu_percentile: 99.5,
        }
    }
}

impl MiEstimatorSpec {
    pub fn binning(bin_count: usize) -> Self {
        MiEstimatorSpec {
            bin_count,
            ..Self::default()
        }
    }

    pub fn gaussian_mixture(noise_std: f64) -> Self {
        MiEstimatorSpec {
            kind: MiEstimatorKind::GaussianMixtureUpper,
            noise_std,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            MiEstimatorKind::Binning => {
                if self.bin_count < 2 {
                    return Err(Error::config(format!("bin_count must be >= 2, got {}", self.bin_count)));
                }
                let (lo, hi) = self.tanh_range;
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::config(format!("bad tanh range ({lo}, {hi})")));
                }
                if !(self.relu_percentile > 0.0 && self.relu_percentile <= 100.0) {
                    return Err(Error::config(format!(
                        "relu percentile must lie in (0, 100], got {}",
                        self.relu_percentile
                    )));
                }
            }
            MiEstimatorKind::GaussianMixtureUpper => {
                if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
                    return Err(Error::config(format!("noise_std must be > 0, got {}", self.noise_std)));
                }
            }
        }
        Ok(())
    }

    pub fn unit(&self) -> MiUnit {
        match self.kind {
            MiEstimatorKind::Binning => MiUnit::Bits,
            MiEstimatorKind::GaussianMixtureUpper => MiUnit::Nats,
        }
    }

    /// Short identifier written next to every estimate.
    pub fn id(&self) -> String {
        match self.kind {
            MiEstimatorKind::Binning => format!("binning-{}", self.bin_count),
            MiEstimatorKind::GaussianMixtureUpper => format!("gaussian-mixture-upper-{}", self.noise_std),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoPoint {
    pub epoch: usize,
    /// 1-based hidden layer.
    pub layer: usize,
    pub mi_xt: f64,
    pub mi_ty: f64,
    pub unit: MiUnit,
    pub estimator: String,
}

/// Assigns dense ids in order of first appearance.
struct Interner<K> {
    ids: HashMap<K, usize>,
    counts: Vec<usize>,
}

impl<K: Hash + Eq> Interner<K> {
    fn new() -> Self {
        Interner {
            ids: HashMap::new(),
            counts: Vec::new(),
        }
    }

    fn add(&mut self, key: K) -> usize {
        let next = self.counts.len();
        let id = *self.ids.entry(key).or_insert(next);
        if id == next {
            self.counts.push(0);
        }
        self.counts[id] += 1;
        id
    }
}

/// Plug-in entropy in bits; counts are visited in a fixed order.
fn entropy_bits(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let s: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64).log2())
        .sum();
    (n.log2() - s / n).max(0.0)
}

/// `H(A | B)` from ids of `A` and `B` for the same rows.
fn conditional_entropy_bits(a: &[usize], b: &[usize]) -> f64 {
    let mut joint = Interner::new();
    let mut marg = Interner::new();
    for (&x, &y) in a.iter().zip(b) {
        joint.add((x, y));
        marg.add(y);
    }
    (entropy_bits(&joint.counts) - entropy_bits(&marg.counts)).max(0.0)
}

/// Dense ids for identical input rows (bitwise equality).
pub fn input_identities(inputs: &Matrix) -> Vec<usize> {
    let mut interner = Interner::new();
    inputs
        .iter_rows()
        .map(|r| interner.add(r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>()))
        .collect()
}

fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Bin range for one layer.
pub fn binning_range(layer: &Matrix, activation: HiddenActivation, spec: &MiEstimatorSpec) -> (f64, f64) {
    match activation {
        HiddenActivation::Tanh => spec.tanh_range,
        HiddenActivation::Relu => {
            let mut v = layer.as_slice().to_vec();
            if v.is_empty() {
                return (0.0, 0.0);
            }
            v.sort_unstable_by(f64::total_cmp);
            (0.0, nearest_rank(&v, spec.relu_percentile).max(0.0))
        }
    }
}

/// Cell ids of the joint bin tuple of every row.
fn bin_rows(layer: &Matrix, range: (f64, f64), bins: usize) -> Vec<usize> {
    let (lo, hi) = range;
    let width = hi - lo;
    let cell = |a: f64| -> u16 {
        if width <= 0.0 {
            return 0;
        }
        let c = ((a - lo) / width * bins as f64).floor();
        c.clamp(0.0, (bins - 1) as f64) as u16
    };
    let mut interner = Interner::new();
    layer
        .iter_rows()
        .map(|r| interner.add(r.iter().map(|&a| cell(a)).collect::<Vec<u16>>()))
        .collect()
}

fn check_rows(layer: &Matrix, n_ids: usize, n_labels: usize) -> Result<()> {
    if layer.rows() == 0 || layer.cols() == 0 {
        return Err(Error::domain("no activations to estimate from"));
    }
    if n_ids != layer.rows() || n_labels != layer.rows() {
        return Err(Error::shape(format!(
            "{} activation rows, {n_ids} input ids, {n_labels} labels",
            layer.rows()
        )));
    }
    Ok(())
}

/// `(I(X;T), I(T;Y))` in bits from one layer's noise-free activations.
pub fn mi_binning(
    layer: &Matrix,
    activation: HiddenActivation,
    input_ids: &[usize],
    labels: &[usize],
    spec: &MiEstimatorSpec,
) -> Result<(f64, f64)> {
    spec.validate()?;
    check_rows(layer, input_ids.len(), labels.len())?;
    let range = binning_range(layer, activation, spec);
    let t = bin_rows(layer, range, spec.bin_count);
    let mut tc = Interner::new();
    for &id in &t {
        tc.add(id);
    }
    let h_t = entropy_bits(&tc.counts);
    let mi_xt = (h_t - conditional_entropy_bits(&t, input_ids)).max(0.0);
    let mi_ty = (h_t - conditional_entropy_bits(&t, labels)).max(0.0);
    Ok((mi_xt, mi_ty))
}

/// `-(1/n) Σ_i log((1/n) Σ_j exp(-‖h_i - h_j‖² / (4σ²)))` over `rows`.
fn pairwise_term(hidden: &Matrix, rows: &[usize], noise_std: f64) -> f64 {
    let n = rows.len() as f64;
    let scale = 1.0 / (4.0 * noise_std * noise_std);
    let mut total = 0.0;
    for &i in rows {
        let hi = hidden.row(i);
        let s: f64 = rows.iter().map(|&j| (-sq_dist(hi, hidden.row(j)) * scale).exp()).sum();
        total += (s / n).ln();
    }
    -total / n
}

/// `(I(X;T), I(T;Y))` in nats, pairwise upper bound with kernel width from
/// `noise_std`. `I(T;Y)` is clamped at zero.
pub fn mi_gaussian_mixture(hidden: &Matrix, labels: &[usize], noise_std: f64) -> Result<(f64, f64)> {
    if !(noise_std > 0.0 && noise_std.is_finite()) {
        return Err(Error::domain(format!(
            "mixture estimate needs noise_std > 0, got {noise_std}"
        )));
    }
    check_rows(hidden, labels.len(), labels.len())?;
    let all: Vec<usize> = (0..hidden.rows()).collect();
    let mi_xt = pairwise_term(hidden, &all, noise_std).max(0.0);
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let n = labels.len() as f64;
    let within: f64 = by_class
        .iter()
        .filter(|rows| !rows.is_empty())
        .map(|rows| rows.len() as f64 / n * pairwise_term(hidden, rows, noise_std))
        .sum();
    Ok((mi_xt, (mi_xt - within).max(0.0)))
}

/// Estimates for every hidden layer of `state` on `dataset`.
pub fn info_points(
    state: &NetworkState,
    dataset: &Dataset,
    input_ids: &[usize],
    epoch: usize,
    spec: &MiEstimatorSpec,
) -> Result<Vec<InfoPoint>> {
    spec.validate()?;
    let record = state.forward(dataset.inputs(), 0.0, 0)?;
    let activation = state.spec().hidden_activation;
    record
        .hidden()
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            let (mi_xt, mi_ty) = match spec.kind {
                MiEstimatorKind::Binning => mi_binning(layer, activation, input_ids, dataset.labels(), spec)?,
                MiEstimatorKind::GaussianMixtureUpper => mi_gaussian_mixture(layer, dataset.labels(), spec.noise_std)?,
            };
            Ok(InfoPoint {
                epoch,
                layer: k + 1,
                mi_xt,
                mi_ty,
                unit: spec.unit(),
                estimator: spec.id(),
            })
        })
        .collect()
}

/// Collects [`InfoPoint`]s at scheduled epochs, in epoch order.
#[derive(Debug, Clone)]
pub struct InfoRecorder {
    spec: MiEstimatorSpec,
    schedule: Vec<usize>,
    input_ids: Vec<usize>,
    points: Vec<InfoPoint>,
}

impl InfoRecorder {
    pub fn new(spec: MiEstimatorSpec, mut schedule: Vec<usize>, dataset: &Dataset) -> Result<Self> {
        spec.validate()?;
        if schedule.is_empty() {
            return Err(Error::config("information-plane schedule is empty"));
        }
        schedule.sort_unstable();
        schedule.dedup();
        Ok(InfoRecorder {
            spec,
            schedule,
            input_ids: input_identities(dataset.inputs()),
            points: Vec::new(),
        })
    }

    pub fn is_scheduled(&self, epoch: usize) -> bool {
        self.schedule.binary_search(&epoch).is_ok()
    }

    /// Records `epoch` if it is scheduled and later than anything recorded.
    pub fn observe(&mut self, epoch: usize, state: &NetworkState, dataset: &Dataset) -> Result<bool> {
        let later = self.points.last().is_none_or(|p| epoch > p.epoch);
        if !self.is_scheduled(epoch) || !later {
            return Ok(false);
        }
        let pts = info_points(state, dataset, &self.input_ids, epoch, &self.spec)?;
        self.points.extend(pts);
        Ok(true)
    }

    pub fn points(&self) -> &[InfoPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<InfoPoint> {
        self.points
    }
}

/// Runs `advance(epoch)` for each scheduled epoch in order; it must return the
/// network as it stands after that many epochs.
pub fn record_trajectory(
    schedule: &[usize],
    dataset: &Dataset,
    spec: &MiEstimatorSpec,
    mut advance: impl FnMut(usize) -> Result<NetworkState>,
) -> Result<Vec<InfoPoint>> {
    let mut recorder = InfoRecorder::new(*spec, schedule.to_vec(), dataset)?;
    for epoch in recorder.schedule.clone() {
        let state = advance(epoch)?;
        recorder.observe(epoch, &state, dataset)?;
    }
    Ok(recorder.into_points())
}
