use proptest::prelude::*;
use typsgd::data::{Dataset, Split};
use typsgd::gsnr::{gsnr_of_gradients, GsnrMethod};
use typsgd::linalg::Matrix;
use typsgd::nn::{HiddenActivation, LayerFilter, NetworkSpec, NetworkState};
use typsgd::sampling::{build_partition_greedy, Sampler};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Squared mean norm and variance are sums over coordinates, so the
    /// whole-network values equal the sums of the per-layer values.
    #[test]
    fn whole_network_moments_are_sums_over_layers(
        widths in prop::collection::vec(1usize..5, 1..4),
        relu in any::<bool>(),
        init_seed in any::<u64>(),
        data in prop::collection::vec(-2.0f64..2.0, 3 * 10),
        m in 1usize..9,
        use_ts in any::<bool>(),
    ) {
        let mut all_widths = vec![3];
        all_widths.extend(&widths);
        all_widths.push(3);
        let act = if relu { HiddenActivation::Relu } else { HiddenActivation::Tanh };
        let spec = NetworkSpec::multiclass(all_widths, act).unwrap();
        let net = NetworkState::init(&spec, init_seed).unwrap();
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let d = Dataset::new(Matrix::from_vec(10, 3, data).unwrap(), labels, 3, Split::Train, "p").unwrap();
        let idx: Vec<usize> = (0..10).collect();
        let g = net.per_sample_gradients(&d, &idx).unwrap();
        let sampler = if use_ts {
            Sampler::Typicality(build_partition_greedy(&g, 4, m, 1.0).unwrap())
        } else {
            Sampler::srs(10, m).unwrap()
        };
        let whole = gsnr_of_gradients(&g, &sampler, LayerFilter::Whole, GsnrMethod::Analytic).unwrap();
        let (mut mean_sq, mut var) = (0.0, 0.0);
        for k in 1..=spec.layer_count() {
            let p = gsnr_of_gradients(&g, &sampler, LayerFilter::Layer(k), GsnrMethod::Analytic).unwrap();
            mean_sq += p.mean_norm * p.mean_norm;
            var += p.std * p.std;
        }
        let w2 = whole.mean_norm * whole.mean_norm;
        prop_assert!((w2 - mean_sq).abs() <= 1e-10 * (1.0 + w2));
        prop_assert!((whole.std * whole.std - var).abs() <= 1e-10 * (1.0 + var));
    }
}

#[test]
fn layer_filter_out_of_range_is_rejected() {
    let spec = NetworkSpec::multiclass(vec![2, 3, 2], HiddenActivation::Tanh).unwrap();
    let net = NetworkState::init(&spec, 1).unwrap();
    let d = Dataset::new(
        Matrix::from_rows(&[vec![0.1, 0.2], vec![0.5, -1.0]]).unwrap(),
        vec![0, 1],
        2,
        Split::Train,
        "p",
    )
    .unwrap();
    let g = net.per_sample_gradients(&d, &[0, 1]).unwrap();
    let s = Sampler::srs(2, 1).unwrap();
    assert!(gsnr_of_gradients(&g, &s, LayerFilter::Layer(3), GsnrMethod::Analytic).is_err());
    assert!(gsnr_of_gradients(&g, &s, LayerFilter::Layer(0), GsnrMethod::Analytic).is_err());
}
