//! The 12-bit synthetic task: every ±1 pattern of 12 inputs, labelled by a
//! thresholded linear score whose weights come from points on the sphere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::Result;
use crate::linalg::Matrix;

pub const SYNTHETIC_BITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRule {
    /// Unit-norm weights, one per input bit.
    pub weight_vector: Vec<f64>,
    /// `None` calibrates the threshold to the median score.
    pub threshold: Option<f64>,
    /// Label sharpness; `None` is the deterministic (infinitely sharp) limit.
    pub gamma: Option<f64>,
}

impl SyntheticRule {
    /// Places 12 points uniformly on the unit sphere and one reference
    /// direction; each bit's weight is its point's projection on that
    /// direction, normalized so the weight vector has unit length.
    pub fn from_seed(rule_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rule_seed);
        let reference = unit_vector3(&mut rng);
        let mut weights: Vec<f64> = (0..SYNTHETIC_BITS)
            .map(|_| {
                let p = unit_vector3(&mut rng);
                p[0] * reference[0] + p[1] * reference[1] + p[2] * reference[2]
            })
            .collect();
        let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        for w in &mut weights {
            *w /= norm;
        }
        SyntheticRule {
            weight_vector: weights,
            threshold: None,
            gamma: None,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.weight_vector.iter().zip(x).map(|(w, v)| w * v).sum()
    }
}

fn unit_vector3(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Row `p` encodes the bits of `p` (bit k set -> +1, else -1).
pub fn pattern_inputs() -> Matrix {
    let n = 1usize << SYNTHETIC_BITS;
    let mut data = Vec::with_capacity(n * SYNTHETIC_BITS);
    for p in 0..n {
        for k in 0..SYNTHETIC_BITS {
            data.push(if (p >> k) & 1 == 1 { 1.0 } else { -1.0 });
        }
    }
    Matrix::from_vec(n, SYNTHETIC_BITS, data).expect("pattern matrix shape")
}

/// All 4096 patterns with binary labels. `seed` only matters for finite
/// `gamma`, where labels are Bernoulli draws.
pub fn gen_synthetic(rule: &SyntheticRule, seed: u64) -> Result<Dataset> {
    let inputs = pattern_inputs();
    let scores: Vec<f64> = inputs.iter_rows().map(|x| rule.score(x)).collect();
    let threshold = rule.threshold.unwrap_or_else(|| median_threshold(&scores));
    let labels: Vec<usize> = match rule.gamma {
        None => scores.iter().map(|&s| usize::from(s > threshold)).collect(),
        Some(gamma) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            scores
                .iter()
                .map(|&s| {
                    let p = 1.0 / (1.0 + (-gamma * (s - threshold)).exp());
                    usize::from(rng.random::<f64>() < p)
                })
                .collect()
        }
    };
    Dataset::new(inputs, labels, 2, Split::Train, "synthetic-12bit")
}

/// Threshold between the two sorted scores that split the set closest to
/// half-and-half.
fn median_threshold(scores: &[f64]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let half = n / 2;
    // candidate cut points are gaps between distinct consecutive scores;
    // labels are "score > threshold", so a cut after position k puts n-k-1 rows above
    let mut best: Option<(usize, f64)> = None;
    for k in 0..n - 1 {
        if sorted[k] < sorted[k + 1] {
            let above = n - k - 1;
            let dist = above.abs_diff(half);
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, 0.5 * (sorted[k] + sorted[k + 1])));
            }
        }
    }
    best.map_or(sorted[0], |(_, t)| t)
}
