//! Fully connected feed-forward networks with exact backpropagation.
//!
//! Layers are numbered from 1: layer `k` is the `k`-th weight matrix and the
//! activation it produces. Layers `1..L-1` are hidden, layer `L` is the output.
//! All parameters live in one flat vector laid out layer by layer, weights
//! (`fan_in x fan_out`, row-major) followed by biases, so a [`GradientVector`]
//! and the parameter vector share segment boundaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm_sq, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenActivation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    BinaryCrossEntropy,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Input width first, output width last.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub loss_kind: LossKind,
}

impl NetworkSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
        loss_kind: LossKind,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            layer_widths,
            hidden_activation,
            output_activation,
            loss_kind,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Binary sigmoid head with cross-entropy.
    pub fn binary(layer_widths: Vec<usize>, hidden: HiddenActivation) -> Result<Self> {
        Self::new(
            layer_widths,
            hidden,
            OutputActivation::Sigmoid,
            LossKind::BinaryCrossEntropy,
        )
    }

    /// Softmax head with cross-entropy.
    pub fn multiclass(layer_widths: Vec<usize>, hidden: HiddenActivation) -> Result<Self> {
        Self::new(layer_widths, hidden, OutputActivation::Softmax, LossKind::CrossEntropy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::config("a network needs at least 2 layer widths"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        let out = *self.layer_widths.last().unwrap();
        match (self.output_activation, self.loss_kind) {
            (OutputActivation::Sigmoid, LossKind::BinaryCrossEntropy) if out == 1 => Ok(()),
            (OutputActivation::Sigmoid, LossKind::BinaryCrossEntropy) => Err(Error::config(format!(
                "sigmoid output encodes a binary label and needs width 1, got {out}"
            ))),
            (OutputActivation::Softmax, LossKind::CrossEntropy) if out >= 2 => Ok(()),
            (OutputActivation::Softmax, LossKind::CrossEntropy) => {
                Err(Error::config("softmax output needs one unit per class (at least 2)"))
            }
            (o, l) => Err(Error::config(format!(
                "output activation {o:?} cannot be paired with loss {l:?}"
            ))),
        }
    }

    /// Number of weight layers (`widths - 1`).
    pub fn layer_count(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layer_count() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    /// Classes the output head can represent.
    pub fn class_count(&self) -> usize {
        match self.output_activation {
            OutputActivation::Sigmoid => 2,
            OutputActivation::Softmax => *self.layer_widths.last().unwrap(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(offset, len)` of each layer's parameters in the flat vector.
    pub fn segments(&self) -> Vec<Segment> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let len = w[0] * w[1] + w[1];
                let s = Segment { offset, len };
                offset += len;
                s
            })
            .collect()
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.input_dim() != self.input_width() {
            return Err(Error::shape(format!(
                "dataset has {} features, network expects {}",
                dataset.input_dim(),
                self.input_width()
            )));
        }
        if dataset.class_count() != self.class_count() {
            return Err(Error::shape(format!(
                "dataset has {} classes, network output encodes {}",
                dataset.class_count(),
                self.class_count()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
}

/// Which part of a parameter-space vector to look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerFilter {
    Whole,
    /// 1-based weight layer.
    Layer(usize),
}

/// A vector in parameter space (a gradient or an update).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl GradientVector {
    pub fn zeros(segments: Vec<Segment>) -> Self {
        let len = segments.iter().map(|s| s.len).sum();
        GradientVector {
            values: vec![0.0; len],
            segments,
        }
    }

    pub fn new(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let len: usize = segments.iter().map(|s| s.len).sum();
        if len != values.len() {
            return Err(Error::shape(format!(
                "segments cover {len} entries, vector has {}",
                values.len()
            )));
        }
        let mut expected = 0;
        for s in &segments {
            if s.offset != expected {
                return Err(Error::shape("segments must be contiguous and ordered"));
            }
            expected += s.len;
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("gradient has non-finite entries"));
        }
        Ok(GradientVector { values, segments })
    }

    /// A single-segment vector; handy for scalar and toy instances.
    pub fn from_values(values: Vec<f64>) -> Self {
        let len = values.len();
        GradientVector {
            values,
            segments: vec![Segment { offset: 0, len }],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.segments.len()
    }

    pub fn select(&self, filter: LayerFilter) -> Result<&[f64]> {
        match filter {
            LayerFilter::Whole => Ok(&self.values),
            LayerFilter::Layer(k) if k >= 1 && k <= self.segments.len() => {
                let s = self.segments[k - 1];
                Ok(&self.values[s.offset..s.offset + s.len])
            }
            LayerFilter::Layer(k) => Err(Error::shape(format!("layer {k} outside 1..={}", self.segments.len()))),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.values)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn same_layout(&self, other: &GradientVector) -> bool {
        self.segments == other.segments
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &GradientVector) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::shape("gradient layouts differ"));
        }
        axpy(alpha, &other.values, &mut self.values);
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// Arithmetic mean, accumulated in list order.
    pub fn mean(list: &[GradientVector]) -> Result<GradientVector> {
        let first = list
            .first()
            .ok_or_else(|| Error::domain("mean of an empty gradient list"))?;
        let mut acc = GradientVector::zeros(first.segments.clone());
        for g in list {
            acc.add_scaled(1.0, g)?;
        }
        acc.scale(1.0 / list.len() as f64);
        Ok(acc)
    }
}

/// Post-activations of every layer for a set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    /// `layers[k-1]` holds layer `k`; the last entry is the output.
    layers: Vec<Matrix>,
    noise_std: f64,
}

impl ActivationRecord {
    /// 1-based layer; `L` is the output.
    pub fn layer(&self, k: usize) -> &Matrix {
        &self.layers[k - 1]
    }

    pub fn hidden(&self) -> &[Matrix] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output(&self) -> &Matrix {
        self.layers.last().unwrap()
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    spec: NetworkSpec,
    segments: Vec<Segment>,
    params: Vec<f64>,
    init_seed: u64,
}

/// Per-sample backprop factors. A dense layer's gradient is the outer
/// product of its output delta with `[a_in, 1]`, so the inner product of two
/// per-sample gradients is `Σ_k (δ_k·δ'_k)(a_{k-1}·a'_{k-1} + 1)`, which
/// costs `Σ (fan_in + fan_out)` instead of the parameter count.
#[derive(Debug, Clone)]
pub struct GradientFactors {
    /// `(offset, fan_in, fan_out)` per layer within a row; the row holds `a_in` then `delta`.
    layout: Vec<(usize, usize, usize)>,
    stride: usize,
    rows: usize,
    data: Vec<f64>,
}

impl GradientFactors {
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Inner product of the full gradients of rows `i` and `j`.
    pub fn dot(&self, i: usize, j: usize) -> f64 {
        let (ri, rj) = (
            &self.data[i * self.stride..(i + 1) * self.stride],
            &self.data[j * self.stride..(j + 1) * self.stride],
        );
        self.layout
            .iter()
            .map(|&(at, fan_in, fan_out)| {
                let d = dot(
                    &ri[at + fan_in..at + fan_in + fan_out],
                    &rj[at + fan_in..at + fan_in + fan_out],
                );
                if d == 0.0 {
                    0.0
                } else {
                    d * (dot(&ri[at..at + fan_in], &rj[at..at + fan_in]) + 1.0)
                }
            })
            .sum()
    }
}

/// Per-thread buffers for one forward/backward pass.
struct Scratch {
    /// `acts[0]` is the input, `acts[k]` the post-activation of layer k.
    acts: Vec<Vec<f64>>,
    /// `zs[k-1]` is the pre-activation of layer k.
    zs: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    fn new(spec: &NetworkSpec) -> Self {
        let max_w = *spec.layer_widths.iter().max().unwrap();
        Scratch {
            acts: spec.layer_widths.iter().map(|&w| vec![0.0; w]).collect(),
            zs: spec.layer_widths[1..].iter().map(|&w| vec![0.0; w]).collect(),
            delta: Vec::with_capacity(max_w),
            delta_prev: Vec::with_capacity(max_w),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl NetworkState {
    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; spec.param_count()];
        for (seg, w) in spec.segments().iter().zip(spec.layer_widths.windows(2)) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            for p in &mut params[seg.offset..seg.offset + w[0] * w[1]] {
                let draw: f64 = StandardNormal.sample(&mut rng);
                *p = scale * draw;
            }
        }
        Ok(NetworkState {
            spec: spec.clone(),
            segments: spec.segments(),
            params,
            init_seed: seed,
        })
    }

    /// Builds a state from explicit per-layer weights (`fan_in x fan_out`,
    /// row-major) and biases.
    pub fn from_layers(spec: &NetworkSpec, weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        spec.validate()?;
        let n = spec.layer_count();
        if weights.len() != n || biases.len() != n {
            return Err(Error::shape(format!("expected {n} weight and bias layers")));
        }
        let mut params = Vec::with_capacity(spec.param_count());
        for (k, w) in spec.layer_widths.windows(2).enumerate() {
            if weights[k].len() != w[0] * w[1] || biases[k].len() != w[1] {
                return Err(Error::shape(format!(
                    "layer {} expects {}x{} weights and {} biases",
                    k + 1,
                    w[0],
                    w[1],
                    w[1]
                )));
            }
            params.extend_from_slice(&weights[k]);
            params.extend_from_slice(&biases[k]);
        }
        Self::from_flat(spec, params, 0)
    }

    pub fn from_flat(spec: &NetworkSpec, params: Vec<f64>, init_seed: u64) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::shape(format!(
                "spec has {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("non-finite parameter"));
        }
        Ok(NetworkState {
            spec: spec.clone(),
            segments: spec.segments(),
            params,
            init_seed,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// The parameters as a [`GradientVector`]-shaped vector.
    pub fn flatten(&self) -> GradientVector {
        GradientVector {
            values: self.params.clone(),
            segments: self.segments.clone(),
        }
    }

    /// Layer `k` weights, `fan_in x fan_out` row-major.
    pub fn weights(&self, k: usize) -> &[f64] {
        let seg = self.segments[k - 1];
        let fan_in = self.spec.layer_widths[k - 1];
        let fan_out = self.spec.layer_widths[k];
        &self.params[seg.offset..seg.offset + fan_in * fan_out]
    }

    pub fn biases(&self, k: usize) -> &[f64] {
        let seg = self.segments[k - 1];
        let fan_out = self.spec.layer_widths[k];
        &self.params[seg.offset + seg.len - fan_out..seg.offset + seg.len]
    }

    fn forward_into(&self, x: &[f64], s: &mut Scratch) {
        let widths = &self.spec.layer_widths;
        let last = self.spec.layer_count();
        s.acts[0].copy_from_slice(x);
        let mut offset = 0;
        for k in 1..=last {
            let (fan_in, fan_out) = (widths[k - 1], widths[k]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let (prev, rest) = s.acts.split_at_mut(k);
            let a_in = &prev[k - 1];
            let z = &mut s.zs[k - 1];
            z.copy_from_slice(b);
            for (i, &ai) in a_in.iter().enumerate() {
                if ai != 0.0 {
                    axpy(ai, &w[i * fan_out..(i + 1) * fan_out], z);
                }
            }
            let a_out = &mut rest[0];
            if k < last {
                match self.spec.hidden_activation {
                    HiddenActivation::Tanh => {
                        for (a, &zv) in a_out.iter_mut().zip(z.iter()) {
                            *a = zv.tanh();
                        }
                    }
                    HiddenActivation::Relu => {
                        for (a, &zv) in a_out.iter_mut().zip(z.iter()) {
                            *a = zv.max(0.0);
                        }
                    }
                }
            } else {
                match self.spec.output_activation {
                    OutputActivation::Sigmoid => {
                        for (a, &zv) in a_out.iter_mut().zip(z.iter()) {
                            *a = sigmoid(zv);
                        }
                    }
                    OutputActivation::Softmax => {
                        let lse = log_sum_exp(z);
                        for (a, &zv) in a_out.iter_mut().zip(z.iter()) {
                            *a = (zv - lse).exp();
                        }
                    }
                }
            }
        }
    }

    fn sample_loss(&self, s: &Scratch, y: usize) -> f64 {
        let z = s.zs.last().unwrap();
        match self.spec.loss_kind {
            LossKind::BinaryCrossEntropy => softplus(z[0]) - (y as f64) * z[0],
            LossKind::CrossEntropy => log_sum_exp(z) - z[y],
        }
    }

    fn predicted_class(&self, s: &Scratch) -> usize {
        let out = s.acts.last().unwrap();
        match self.spec.output_activation {
            OutputActivation::Sigmoid => usize::from(out[0] >= 0.5),
            OutputActivation::Softmax => {
                out.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (c, &p)| if p > best.1 { (c, p) } else { best },
                    )
                    .0
            }
        }
    }

    /// Walks the layers from the output back after a forward pass into `s`,
    /// calling `visit(k, delta_k, a_{k-1})` for each layer `k`.
    fn backprop_with(&self, y: usize, s: &mut Scratch, mut visit: impl FnMut(usize, &[f64], &[f64])) {
        let widths = &self.spec.layer_widths;
        let last = self.spec.layer_count();
        // d loss / d z at the output is (p - target) for both heads
        s.delta.clear();
        s.delta.extend_from_slice(s.acts.last().unwrap());
        match self.spec.output_activation {
            OutputActivation::Sigmoid => s.delta[0] -= y as f64,
            OutputActivation::Softmax => s.delta[y] -= 1.0,
        }
        for k in (1..=last).rev() {
            let (fan_in, fan_out) = (widths[k - 1], widths[k]);
            visit(k, &s.delta, &s.acts[k - 1]);
            if k > 1 {
                let offset = self.segments[k - 1].offset;
                let w = &self.params[offset..offset + fan_in * fan_out];
                s.delta_prev.clear();
                s.delta_prev
                    .extend((0..fan_in).map(|i| dot(&w[i * fan_out..(i + 1) * fan_out], &s.delta)));
                let a_hidden = &s.acts[k - 1];
                match self.spec.hidden_activation {
                    HiddenActivation::Tanh => {
                        for (d, &a) in s.delta_prev.iter_mut().zip(a_hidden) {
                            *d *= 1.0 - a * a;
                        }
                    }
                    HiddenActivation::Relu => {
                        for (d, &z) in s.delta_prev.iter_mut().zip(&s.zs[k - 2]) {
                            if z <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                }
                std::mem::swap(&mut s.delta, &mut s.delta_prev);
            }
        }
    }

    /// Adds `scale * grad loss(x, y)` into `grad` after a forward pass into `s`.
    fn backward_into(&self, y: usize, s: &mut Scratch, grad: &mut [f64], scale: f64) {
        let widths = &self.spec.layer_widths;
        let segments = &self.segments;
        self.backprop_with(y, s, |k, delta, a_in| {
            let (fan_in, fan_out) = (widths[k - 1], widths[k]);
            let seg = segments[k - 1];
            let g = &mut grad[seg.offset..seg.offset + seg.len];
            let (gw, gb) = g.split_at_mut(fan_in * fan_out);
            axpy(scale, delta, gb);
            for (i, &ai) in a_in.iter().enumerate() {
                if ai != 0.0 {
                    axpy(scale * ai, delta, &mut gw[i * fan_out..(i + 1) * fan_out]);
                }
            }
        });
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.spec.input_width() {
            return Err(Error::shape(format!(
                "inputs have width {}, network expects {}",
                inputs.cols(),
                self.spec.input_width()
            )));
        }
        Ok(())
    }

    fn check_indices(&self, dataset: &Dataset, indices: &[usize]) -> Result<()> {
        self.spec.check_dataset(dataset)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::domain(format!(
                "index {bad} outside dataset of {} rows",
                dataset.len()
            )));
        }
        Ok(())
    }

    /// All layer activations. With `noise_std > 0` each recorded hidden
    /// activation gets independent `N(0, noise_std^2)` noise; the noise is not
    /// propagated and the output is always exact.
    pub fn forward(&self, inputs: &Matrix, noise_std: f64, seed: u64) -> Result<ActivationRecord> {
        self.check_inputs(inputs)?;
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::domain(format!(
                "noise_std must be a finite nonnegative value, got {noise_std}"
            )));
        }
        let last = self.spec.layer_count();
        let mut layers: Vec<Matrix> = self.spec.layer_widths[1..]
            .iter()
            .map(|&w| Matrix::zeros(inputs.rows(), w))
            .collect();
        let mut s = Scratch::new(&self.spec);
        for (i, x) in inputs.iter_rows().enumerate() {
            self.forward_into(x, &mut s);
            for k in 1..=last {
                layers[k - 1].row_mut(i).copy_from_slice(&s.acts[k]);
            }
        }
        if noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, noise_std).expect("validated noise_std");
            for layer in &mut layers[..last - 1] {
                for v in layer.as_mut_slice() {
                    *v += normal.sample(&mut rng);
                }
            }
        }
        Ok(ActivationRecord { layers, noise_std })
    }

    /// Mean loss over `indices` (natural log).
    pub fn loss(&self, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::domain("loss over an empty index set"));
        }
        self.check_indices(dataset, indices)?;
        let mut s = Scratch::new(&self.spec);
        let total: f64 = indices
            .iter()
            .map(|&i| {
                self.forward_into(dataset.input(i), &mut s);
                self.sample_loss(&s, dataset.label(i))
            })
            .sum();
        Ok(total / indices.len() as f64)
    }

    /// `(mean loss, accuracy)` over the whole dataset.
    pub fn evaluate(&self, dataset: &Dataset) -> Result<(f64, f64)> {
        if dataset.is_empty() {
            return Err(Error::domain("evaluate on an empty dataset"));
        }
        self.spec.check_dataset(dataset)?;
        let mut s = Scratch::new(&self.spec);
        let mut loss = 0.0;
        let mut correct = 0usize;
        for i in 0..dataset.len() {
            self.forward_into(dataset.input(i), &mut s);
            loss += self.sample_loss(&s, dataset.label(i));
            correct += usize::from(self.predicted_class(&s) == dataset.label(i));
        }
        let n = dataset.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// One gradient per index, in order.
    pub fn per_sample_gradients(&self, dataset: &Dataset, indices: &[usize]) -> Result<Vec<GradientVector>> {
        self.check_indices(dataset, indices)?;
        let segments = &self.segments;
        let mut s = Scratch::new(&self.spec);
        Ok(indices
            .iter()
            .map(|&i| {
                let mut g = GradientVector::zeros(segments.clone());
                self.forward_into(dataset.input(i), &mut s);
                self.backward_into(dataset.label(i), &mut s, &mut g.values, 1.0);
                g
            })
            .collect())
    }

    /// Backprop factors for each index, in order; see [`GradientFactors`].
    pub fn gradient_factors(&self, dataset: &Dataset, indices: &[usize]) -> Result<GradientFactors> {
        self.check_indices(dataset, indices)?;
        let widths = &self.spec.layer_widths;
        let mut layout = Vec::with_capacity(self.spec.layer_count());
        let mut stride = 0;
        for k in 1..widths.len() {
            layout.push((stride, widths[k - 1], widths[k]));
            stride += widths[k - 1] + widths[k];
        }
        let mut data = vec![0.0; stride * indices.len()];
        let mut s = Scratch::new(&self.spec);
        for (row, &i) in data.chunks_exact_mut(stride.max(1)).zip(indices) {
            self.forward_into(dataset.input(i), &mut s);
            self.backprop_with(dataset.label(i), &mut s, |k, delta, a_in| {
                let (at, fan_in, fan_out) = layout[k - 1];
                row[at..at + fan_in].copy_from_slice(a_in);
                row[at + fan_in..at + fan_in + fan_out].copy_from_slice(delta);
            });
        }
        Ok(GradientFactors {
            layout,
            stride,
            rows: indices.len(),
            data,
        })
    }

    /// Mean gradient over `indices`; the minibatch gradient of an SGD step.
    pub fn batch_gradient(&self, dataset: &Dataset, indices: &[usize]) -> Result<GradientVector> {
        if indices.is_empty() {
            return Err(Error::domain("gradient over an empty index set"));
        }
        self.check_indices(dataset, indices)?;
        let mut g = GradientVector::zeros(self.segments.clone());
        let mut s = Scratch::new(&self.spec);
        for &i in indices {
            self.forward_into(dataset.input(i), &mut s);
            self.backward_into(dataset.label(i), &mut s, &mut g.values, 1.0);
        }
        g.scale(1.0 / indices.len() as f64);
        Ok(g)
    }

    /// Exact gradient of the training objective (mean over every row).
    pub fn full_gradient(&self, dataset: &Dataset) -> Result<GradientVector> {
        let all: Vec<usize> = (0..dataset.len()).collect();
        self.batch_gradient(dataset, &all)
    }

    /// `theta - step_size * gradient`, leaving `self` untouched.
    pub fn sgd_step(&self, gradient: &GradientVector, step_size: f64) -> Result<NetworkState> {
        let mut next = self.clone();
        next.apply_sgd_step(gradient, step_size)?;
        Ok(next)
    }

    /// In-place form of [`NetworkState::sgd_step`]. On error `self` is unchanged.
    pub fn apply_sgd_step(&mut self, gradient: &GradientVector, step_size: f64) -> Result<()> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::config(format!("step size must be positive, got {step_size}")));
        }
        if gradient.segments != self.segments {
            return Err(Error::shape("gradient layout does not match the network"));
        }
        let updated: Vec<f64> = self
            .params
            .iter()
            .zip(&gradient.values)
            .map(|(p, g)| p - step_size * g)
            .collect();
        if updated.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("update produced non-finite parameters"));
        }
        self.params = updated;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn toy_dataset(inputs: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Dataset {
        Dataset::new(
            Matrix::from_rows(&inputs).unwrap(),
            labels,
            classes,
            Split::Train,
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::binary(vec![3], HiddenActivation::Tanh).is_err());
        assert!(NetworkSpec::binary(vec![3, 0, 1], HiddenActivation::Tanh).is_err());
        assert!(NetworkSpec::binary(vec![3, 2], HiddenActivation::Tanh).is_err());
        assert!(NetworkSpec::multiclass(vec![3, 1], HiddenActivation::Relu).is_err());
        assert!(NetworkSpec::new(
            vec![3, 2],
            HiddenActivation::Tanh,
            OutputActivation::Softmax,
            LossKind::BinaryCrossEntropy
        )
        .is_err());
        let s = NetworkSpec::binary(vec![2, 1], HiddenActivation::Tanh).unwrap();
        assert_eq!(s.param_count(), 3);
    }

    #[test]
    fn factored_dots_match_flat_gradients() {
        let d = toy_dataset(
            vec![
                vec![0.3, -1.0, 0.5],
                vec![1.2, 0.1, -0.4],
                vec![-0.7, 0.9, 0.0],
                vec![0.0, 0.0, 2.0],
            ],
            vec![0, 2, 1, 2],
            3,
        );
        for act in [HiddenActivation::Tanh, HiddenActivation::Relu] {
            let spec = NetworkSpec::multiclass(vec![3, 4, 5, 3], act).unwrap();
            let net = NetworkState::init(&spec, 11).unwrap();
            let idx = [0, 1, 2, 3];
            let g = net.per_sample_gradients(&d, &idx).unwrap();
            let f = net.gradient_factors(&d, &idx).unwrap();
            assert_eq!(f.len(), 4);
            for i in 0..4 {
                for j in 0..4 {
                    let flat = dot(g[i].values(), g[j].values());
                    assert!((f.dot(i, j) - flat).abs() <= 1e-12 * (1.0 + flat.abs()), "{i},{j}");
                }
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let spec = NetworkSpec::binary(vec![2, 1], HiddenActivation::Tanh).unwrap();
        let a = NetworkState::init(&spec, 7).unwrap();
        let b = NetworkState::init(&spec, 7).unwrap();
        let c = NetworkState::init(&spec, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        assert_eq!(a.biases(1), &[0.0]);
    }

    #[test]
    fn synthetic_architecture_shapes() {
        let spec = NetworkSpec::binary(vec![12, 10, 7, 5, 4, 3, 2, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::init(&spec, 123).unwrap();
        let shapes: Vec<(usize, usize)> = (1..=spec.layer_count())
            .map(|k| (spec.layer_widths[k - 1], st.weights(k).len() / spec.layer_widths[k - 1]))
            .collect();
        assert_eq!(shapes, vec![(12, 10), (10, 7), (7, 5), (5, 4), (4, 3), (3, 2), (2, 1)]);
        assert_eq!(spec.hidden_layer_count(), 6);
    }

    #[test]
    fn zero_tanh_network_has_zero_hidden_activations() {
        let spec = NetworkSpec::binary(vec![3, 4, 2, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::from_flat(&spec, vec![0.0; spec.param_count()], 0).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let rec = st.forward(&x, 0.0, 0).unwrap();
        for layer in rec.hidden() {
            assert!(layer.as_slice().iter().all(|&v| v == 0.0));
        }
        assert!(rec.output().as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn relu_clamps_negative_input() {
        let spec = NetworkSpec::binary(vec![1, 1, 1], HiddenActivation::Relu).unwrap();
        let st = NetworkState::from_layers(&spec, &[vec![1.0], vec![1.0]], &[vec![0.0], vec![0.0]]).unwrap();
        let rec = st.forward(&Matrix::from_rows(&[vec![-3.0]]).unwrap(), 0.0, 0).unwrap();
        assert_eq!(rec.layer(1).as_slice(), &[0.0]);
    }

    #[test]
    fn forward_noise_is_hidden_only_and_seeded() {
        let spec = NetworkSpec::binary(vec![2, 3, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::init(&spec, 1).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.2], vec![0.3, -0.4]]).unwrap();
        let clean = st.forward(&x, 0.0, 0).unwrap();
        assert_eq!(clean, st.forward(&x, 0.0, 99).unwrap());
        let noisy = st.forward(&x, 0.5, 3).unwrap();
        assert_eq!(noisy, st.forward(&x, 0.5, 3).unwrap());
        assert_ne!(noisy.layer(1), clean.layer(1));
        assert_eq!(noisy.output(), clean.output());
        assert!(st.forward(&x, -1.0, 0).is_err());
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let spec = NetworkSpec::binary(vec![2, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::init(&spec, 1).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        assert!(matches!(st.forward(&x, 0.0, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_softmax_loss_is_ln_c() {
        let spec = NetworkSpec::multiclass(vec![2, 3, 5], HiddenActivation::Relu).unwrap();
        let st = NetworkState::from_flat(&spec, vec![0.0; spec.param_count()], 0).unwrap();
        let d = toy_dataset(vec![vec![1.0, 2.0], vec![-1.0, 0.0]], vec![0, 4], 5);
        let l = st.loss(&d, &[0, 1]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn half_sigmoid_loss_is_ln_2() {
        let spec = NetworkSpec::binary(vec![2, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::from_flat(&spec, vec![0.0; 3], 0).unwrap();
        let d = toy_dataset(vec![vec![1.0, 2.0], vec![-1.0, 0.0]], vec![0, 1], 2);
        assert!((st.loss(&d, &[0, 1]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_predictions_have_vanishing_loss() {
        // bias of +-800 saturates both heads
        let bin = NetworkSpec::binary(vec![1, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::from_layers(&bin, &[vec![0.0]], &[vec![800.0]]).unwrap();
        let d = toy_dataset(vec![vec![0.0]], vec![1], 2);
        assert_eq!(st.loss(&d, &[0]).unwrap(), 0.0);

        let multi = NetworkSpec::multiclass(vec![1, 3], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::from_layers(&multi, &[vec![0.0; 3]], &[vec![0.0, 800.0, 0.0]]).unwrap();
        let d = toy_dataset(vec![vec![0.0]], vec![1], 3);
        assert_eq!(st.loss(&d, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn empty_index_set_is_domain_error() {
        let spec = NetworkSpec::binary(vec![1, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::init(&spec, 0).unwrap();
        let d = toy_dataset(vec![vec![0.0]], vec![1], 2);
        assert!(matches!(st.loss(&d, &[]), Err(Error::Domain(_))));
        assert!(matches!(st.loss(&d, &[1]), Err(Error::Domain(_))));
    }

    #[test]
    fn one_sample_full_gradient_is_that_sample() {
        let spec = NetworkSpec::binary(vec![3, 2, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::init(&spec, 5).unwrap();
        let d = toy_dataset(vec![vec![0.3, -0.1, 0.9]], vec![1], 2);
        let full = st.full_gradient(&d).unwrap();
        let per = st.per_sample_gradients(&d, &[0]).unwrap();
        assert_eq!(full, per[0]);
    }

    #[test]
    fn duplicated_index_gives_identical_gradients() {
        let spec = NetworkSpec::multiclass(vec![2, 4, 3], HiddenActivation::Relu).unwrap();
        let st = NetworkState::init(&spec, 5).unwrap();
        let d = toy_dataset(vec![vec![0.3, -0.1], vec![0.2, 0.8]], vec![2, 0], 3);
        let g = st.per_sample_gradients(&d, &[1, 0, 1]).unwrap();
        assert_eq!(g[0], g[2]);
        assert_ne!(g[0], g[1]);
    }

    #[test]
    fn sgd_step_properties() {
        let spec = NetworkSpec::binary(vec![2, 2, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::init(&spec, 2).unwrap();
        let zero = GradientVector::zeros(spec.segments());
        assert_eq!(st.sgd_step(&zero, 0.1).unwrap(), st);

        let theta = st.flatten();
        let cleared = st.sgd_step(&theta, 1.0).unwrap();
        assert!(cleared.params().iter().all(|&p| p == 0.0));

        let g1 = GradientVector::new(vec![0.5; spec.param_count()], spec.segments()).unwrap();
        let g2 = GradientVector::new(
            (0..spec.param_count()).map(|i| i as f64 * 0.25).collect(),
            spec.segments(),
        )
        .unwrap();
        let two = st.sgd_step(&g1, 0.5).unwrap().sgd_step(&g2, 0.5).unwrap();
        let mut sum = g1.clone();
        sum.add_scaled(1.0, &g2).unwrap();
        let one = st.sgd_step(&sum, 0.5).unwrap();
        for (a, b) in two.params().iter().zip(one.params()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(st.sgd_step(&zero, 0.0), Err(Error::Config(_))));
        assert!(matches!(st.sgd_step(&zero, -1.0), Err(Error::Config(_))));
        // the input state is untouched
        assert_eq!(st, NetworkState::init(&spec, 2).unwrap());
    }

    #[test]
    fn gradient_vector_segments_must_cover() {
        let segs = vec![Segment { offset: 0, len: 2 }, Segment { offset: 2, len: 1 }];
        assert!(GradientVector::new(vec![0.0; 2], segs.clone()).is_err());
        let g = GradientVector::new(vec![1.0, 2.0, 3.0], segs).unwrap();
        assert_eq!(g.select(LayerFilter::Layer(2)).unwrap(), &[3.0]);
        assert!(g.select(LayerFilter::Layer(3)).is_err());
        assert!(GradientVector::new(vec![f64::NAN], vec![Segment { offset: 0, len: 1 }]).is_err());
    }

    #[test]
    fn evaluate_reports_accuracy() {
        let spec = NetworkSpec::binary(vec![1, 1], HiddenActivation::Tanh).unwrap();
        let st = NetworkState::from_layers(&spec, &[vec![10.0]], &[vec![0.0]]).unwrap();
        let d = toy_dataset(vec![vec![1.0], vec![-1.0], vec![2.0]], vec![1, 0, 0], 2);
        let (_, acc) = st.evaluate(&d).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }
}
