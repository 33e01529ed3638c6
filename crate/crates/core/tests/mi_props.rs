use proptest::prelude::*;
use typsgd::infoplane::{input_identities, mi_binning, mi_gaussian_mixture, MiEstimatorSpec};
use typsgd::linalg::Matrix;
use typsgd::nn::HiddenActivation;

const N: usize = 24;
const W: usize = 3;

fn layer() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, N * W)
}

fn labels() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..3, N)
}

fn permute(data: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().flat_map(|&i| data[i * W..(i + 1) * W].to_vec()).collect()
}

/// A rotation built from Givens rotations in each coordinate plane.
fn rotate(data: &[f64], angles: &[f64; 3], shift: &[f64; 3]) -> Vec<f64> {
    let planes = [(0, 1), (0, 2), (1, 2)];
    let mut out = data.to_vec();
    for row in out.chunks_exact_mut(W) {
        for (&(a, b), &t) in planes.iter().zip(angles) {
            let (c, s) = (t.cos(), t.sin());
            let (x, y) = (row[a], row[b]);
            row[a] = c * x - s * y;
            row[b] = s * x + c * y;
        }
        for (v, s) in row.iter_mut().zip(shift) {
            *v += s;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimates_ignore_sample_order(
        data in layer(),
        y in labels(),
        perm in Just((0..N).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let ids: Vec<usize> = (0..N).collect();
        let t = Matrix::from_vec(N, W, data.clone()).unwrap();
        let tp = Matrix::from_vec(N, W, permute(&data, &perm)).unwrap();
        let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let idp: Vec<usize> = perm.iter().map(|&i| ids[i]).collect();

        let spec = MiEstimatorSpec::binning(30);
        let a = mi_binning(&t, HiddenActivation::Tanh, &ids, &y, &spec).unwrap();
        let b = mi_binning(&tp, HiddenActivation::Tanh, &idp, &yp, &spec).unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);

        let a = mi_gaussian_mixture(&t, &y, 0.3).unwrap();
        let b = mi_gaussian_mixture(&tp, &yp, 0.3).unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
    }

    #[test]
    fn mixture_estimate_ignores_rotation_and_shift(
        data in layer(),
        y in labels(),
        angles in prop::array::uniform3(-3.2f64..3.2),
        shift in prop::array::uniform3(-5.0f64..5.0),
        sigma in 0.05f64..2.0,
    ) {
        let t = Matrix::from_vec(N, W, data.clone()).unwrap();
        let r = Matrix::from_vec(N, W, rotate(&data, &angles, &shift)).unwrap();
        let a = mi_gaussian_mixture(&t, &y, sigma).unwrap();
        let b = mi_gaussian_mixture(&r, &y, sigma).unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-9, "{} vs {}", a.0, b.0);
        prop_assert!((a.1 - b.1).abs() < 1e-9, "{} vs {}", a.1, b.1);
    }

    #[test]
    fn binned_label_information_is_bounded_by_input_information(
        inputs in prop::collection::vec(0u8..4, N * 2),
        weights in prop::collection::vec(-1.0f64..1.0, 2 * W),
        rule in prop::collection::vec(0usize..3, 16),
    ) {
        // labels are a function of the input, and T a function of the input
        let x: Vec<f64> = inputs.iter().map(|&v| f64::from(v)).collect();
        let xm = Matrix::from_vec(N, 2, x).unwrap();
        let ids = input_identities(&xm);
        let y: Vec<usize> = (0..N).map(|i| rule[usize::from(inputs[2 * i]) * 4 + usize::from(inputs[2 * i + 1])]).collect();
        let t: Vec<f64> = (0..N)
            .flat_map(|i| {
                let row = xm.row(i).to_vec();
                let w = weights.clone();
                (0..W).map(move |k| (row[0] * w[k] + row[1] * w[W + k]).tanh())
            })
            .collect();
        let t = Matrix::from_vec(N, W, t).unwrap();
        let (xt, ty) = mi_binning(&t, HiddenActivation::Tanh, &ids, &y, &MiEstimatorSpec::binning(12)).unwrap();
        prop_assert!(ty <= xt + 1e-9, "I(T;Y)={ty} > I(X;T)={xt}");
    }

    #[test]
    fn estimates_are_deterministic(data in layer(), y in labels()) {
        let t = Matrix::from_vec(N, W, data).unwrap();
        let ids: Vec<usize> = (0..N).collect();
        let spec = MiEstimatorSpec::binning(30);
        let a = mi_binning(&t, HiddenActivation::Tanh, &ids, &y, &spec).unwrap();
        let b = mi_binning(&t, HiddenActivation::Tanh, &ids, &y, &spec).unwrap();
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1.to_bits(), b.1.to_bits());
        let a = mi_gaussian_mixture(&t, &y, 0.1).unwrap();
        let b = mi_gaussian_mixture(&t, &y, 0.1).unwrap();
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1.to_bits(), b.1.to_bits());
    }
}
