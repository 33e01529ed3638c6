//! Backprop against central finite differences of the loss, computed here
//! from `NetworkState::loss` alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use typsgd::data::{Dataset, Split};
use typsgd::linalg::Matrix;
use typsgd::nn::{HiddenActivation, NetworkSpec, NetworkState};

const STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-4;

fn random_dataset(rng: &mut ChaCha8Rng, rows: usize, width: usize, classes: usize) -> Dataset {
    let data: Vec<f64> = (0..rows * width).map(|_| rng.sample(StandardNormal)).collect();
    let labels: Vec<usize> = (0..rows)
        .map(|i| (i + rng.random_range(0..classes)) % classes)
        .collect();
    Dataset::new(
        Matrix::from_vec(rows, width, data).unwrap(),
        labels,
        classes,
        Split::Train,
        "fd",
    )
    .unwrap()
}

fn finite_difference(net: &NetworkState, d: &Dataset, idx: &[usize]) -> Vec<f64> {
    let base = net.params().to_vec();
    (0..base.len())
        .map(|p| {
            let shifted = |delta: f64| {
                let mut q = base.clone();
                q[p] += delta;
                let n = NetworkState::from_flat(net.spec(), q, 0).unwrap();
                n.loss(d, idx).unwrap()
            };
            (shifted(STEP) - shifted(-STEP)) / (2.0 * STEP)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[test]
fn backprop_matches_finite_differences() {
    let shapes: [(&[usize], bool); 6] = [
        (&[4, 3, 2], false),
        (&[4, 3, 1], true),
        (&[3, 5, 4, 3], false),
        (&[2, 6, 1], true),
        (&[5, 4, 4, 2], false),
        (&[3, 4, 3, 1], true),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (widths, binary) in shapes {
        for act in [HiddenActivation::Tanh, HiddenActivation::Relu] {
            for _ in 0..2 {
                let spec = if binary {
                    NetworkSpec::binary(widths.to_vec(), act)
                } else {
                    NetworkSpec::multiclass(widths.to_vec(), act)
                }
                .unwrap();
                // random biases keep relu units away from the kink at zero
                let params: Vec<f64> = (0..spec.param_count())
                    .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let net = NetworkState::from_flat(&spec, params, 0).unwrap();
                let classes = if binary { 2 } else { *widths.last().unwrap() };
                let d = random_dataset(&mut rng, 7, widths[0], classes);
                let idx: Vec<usize> = (0..d.len()).collect();
                let analytic = net.batch_gradient(&d, &idx).unwrap();
                let numeric = finite_difference(&net, &d, &idx);
                let err = relative_error(analytic.values(), &numeric);
                assert!(
                    err < TOLERANCE,
                    "{widths:?} {act:?} binary={binary}: relative error {err:e}"
                );
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    assert!(checked >= 20);
    assert!(worst < TOLERANCE);
}

#[test]
fn per_sample_gradients_average_to_the_batch_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = NetworkSpec::multiclass(vec![3, 4, 3], HiddenActivation::Tanh).unwrap();
    let net = NetworkState::init(&spec, 3).unwrap();
    let d = random_dataset(&mut rng, 9, 3, 3);
    let idx = [0, 2, 3, 7];
    let per = net.per_sample_gradients(&d, &idx).unwrap();
    let batch = net.batch_gradient(&d, &idx).unwrap();
    for (p, &b) in batch.values().iter().enumerate() {
        let mean = per.iter().map(|g| g.values()[p]).sum::<f64>() / idx.len() as f64;
        assert!((mean - b).abs() < 1e-12);
    }
}
