use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PartitionStrategy, SamplerKind};
use crate::data::{Dataset, Split};
use crate::error::Result;
use crate::gsnr::{
    check_assumption1, estimate_growth_constants, growth_violations, gsnr_of_gradients, GrowthCheckpoint,
    GrowthConstants, GsnrValue,
};
use crate::infoplane::{InfoPoint, InfoRecorder};
use crate::nn::{GradientVector, LayerFilter, NetworkState};
use crate::sampling::{build_partition_with_kernel, Exhaustive, GreedyForward, HSelection, Partition, Sampler};

#[derive(Debug, Clone, PartialEq)]
pub struct GsnrRow {
    pub epoch: usize,
    pub layer: LayerFilter,
    pub sampler: &'static str,
    pub mean_norm: f64,
    pub std: f64,
    pub gsnr: GsnrValue,
    /// H/L average squared-norm ratio under the active partition (TS only).
    pub ratio_h_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionEvent {
    pub epoch: usize,
    pub h_size: usize,
    pub n1: usize,
    pub n2: usize,
    pub residual_norm: f64,
    pub density_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSummary {
    pub constants: GrowthConstants,
    pub violations: usize,
}

/// Everything a run records, in memory.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub sampler: &'static str,
    pub gsnr: Vec<GsnrRow>,
    pub mi: Vec<InfoPoint>,
    pub mi_validation: Vec<InfoPoint>,
    pub loss: Vec<LossRow>,
    pub partitions: Vec<PartitionEvent>,
    pub growth: Option<GrowthSummary>,
    pub final_state: NetworkState,
    pub epochs_completed: usize,
}

/// Trains per `config`, recording scheduled instrumentation before each
/// epoch's updates and after the last one. One epoch is `ceil(N/m)` draws for
/// either sampler.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    let (spec, train_set, val_set) = config.prepare()?;
    train_on(
        config,
        &NetworkState::init(&spec, config.network.init_seed)?,
        &train_set,
        val_set.as_ref(),
    )
}

pub fn train_on(
    config: &ExperimentConfig,
    init: &NetworkState,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
) -> Result<TrainOutcome> {
    let opt = &config.optimizer;
    let inst = &config.instrumentation;
    let n = train_set.len();
    let m = opt.batch_size;
    let all: Vec<usize> = (0..n).collect();
    let draws_per_epoch = n.div_ceil(m);
    let layers = init.spec().layer_count();

    let gsnr_epochs = inst.gsnr_schedule.resolve(opt.epochs);
    let mi_epochs = inst.mi_schedule.resolve(opt.epochs);
    let loss_epochs = inst.loss_schedule.resolve(opt.epochs);
    let mut mi = (!mi_epochs.is_empty())
        .then(|| InfoRecorder::new(inst.estimator, mi_epochs.clone(), train_set))
        .transpose()?;
    let mut mi_val = match val_set {
        Some(v) if inst.validation_mi && !mi_epochs.is_empty() => {
            Some(InfoRecorder::new(inst.estimator, mi_epochs.clone(), v)?)
        }
        _ => None,
    };

    let strategy: &dyn HSelection = match config.sampler.strategy {
        PartitionStrategy::Greedy => &GreedyForward,
        PartitionStrategy::Exhaustive => &Exhaustive,
    };
    let h_size = config.sampler.h_size(n);

    let mut state = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut sampler = Sampler::srs(n, m)?;
    let mut out = TrainOutcome {
        sampler: match config.sampler.kind {
            SamplerKind::Srs => "srs",
            SamplerKind::Ts => "ts",
        },
        gsnr: Vec::new(),
        mi: Vec::new(),
        mi_validation: Vec::new(),
        loss: Vec::new(),
        partitions: Vec::new(),
        growth: None,
        final_state: state.clone(),
        epochs_completed: 0,
    };
    let mut growth: Vec<GrowthCheckpoint> = Vec::new();

    for epoch in 0..=opt.epochs {
        // no rebuild after the last update, except that a TS run always has a partition
        let rebuild = config.sampler.kind == SamplerKind::Ts
            && epoch % config.sampler.refresh_period == 0
            && (epoch < opt.epochs || epoch == 0);
        let want_gsnr = gsnr_epochs.binary_search(&epoch).is_ok();
        let grads: Option<Vec<GradientVector>> = (rebuild || want_gsnr)
            .then(|| state.per_sample_gradients(train_set, &all))
            .transpose()?;

        if rebuild {
            let g = grads.as_deref().expect("computed above");
            let factors = state.gradient_factors(train_set, &all)?;
            let kernel = |i: usize, j: usize| factors.dot(i, j);
            let p = build_partition_with_kernel(strategy, g, &kernel, h_size, m, config.sampler.density_ratio)?
                .at_epoch(epoch);
            out.partitions.push(PartitionEvent {
                epoch,
                h_size: p.h_indices.len(),
                n1: p.n1,
                n2: p.n2,
                residual_norm: p.residual_norm.unwrap_or(f64::NAN),
                density_ok: p.density_ok,
            });
            sampler = Sampler::Typicality(p);
        }

        if want_gsnr {
            let g = grads.as_deref().expect("computed above");
            record_gsnr(&mut out.gsnr, g, &sampler, layers, epoch, inst.gsnr_method(epoch))?;
            if inst.growth {
                let full = GradientVector::mean(g)?;
                growth.push(GrowthCheckpoint::from_gradients(g, &full));
            }
        }
        if let Some(r) = &mut mi {
            r.observe(epoch, &state, train_set)?;
        }
        if let (Some(r), Some(v)) = (&mut mi_val, val_set) {
            r.observe(epoch, &state, v)?;
        }
        if loss_epochs.binary_search(&epoch).is_ok() {
            for d in std::iter::once(train_set).chain(val_set) {
                let (loss, accuracy) = state.evaluate(d)?;
                out.loss.push(LossRow {
                    epoch,
                    split: d.split(),
                    loss,
                    accuracy,
                });
            }
        }

        if epoch == opt.epochs {
            break;
        }
        for _ in 0..draws_per_epoch {
            let batch = sampler.draw_with(&mut rng)?;
            let g = state.batch_gradient(train_set, &batch.indices)?;
            state.apply_sgd_step(&g, opt.step_size)?;
        }
        out.epochs_completed = epoch + 1;
    }

    if inst.growth && !growth.is_empty() {
        let constants = estimate_growth_constants(&growth)?;
        out.growth = Some(GrowthSummary {
            violations: growth_violations(&constants, &growth),
            constants,
        });
    }
    out.mi = mi.map(InfoRecorder::into_points).unwrap_or_default();
    out.mi_validation = mi_val.map(InfoRecorder::into_points).unwrap_or_default();
    out.final_state = state;
    Ok(out)
}

fn record_gsnr(
    rows: &mut Vec<GsnrRow>,
    grads: &[GradientVector],
    sampler: &Sampler,
    layers: usize,
    epoch: usize,
    method: crate::gsnr::GsnrMethod,
) -> Result<()> {
    let partition: Option<&Partition> = match sampler {
        Sampler::Typicality(p) if !p.l_indices.is_empty() => Some(p),
        _ => None,
    };
    for filter in std::iter::once(LayerFilter::Whole).chain((1..=layers).map(LayerFilter::Layer)) {
        let point = gsnr_of_gradients(grads, sampler, filter, method)?;
        let ratio_h_l = match partition {
            Some(p) => check_assumption1(grads, p, filter)?.ratio,
            None => None,
        };
        rows.push(GsnrRow {
            epoch,
            layer: filter,
            sampler: sampler.name(),
            mean_norm: point.mean_norm,
            std: point.std,
            gsnr: point.gsnr,
            ratio_h_l,
        });
    }
    Ok(())
}

/// First epoch at which `points` for `layer` reach `threshold`.
pub fn first_epoch_reaching(points: &[InfoPoint], layer: usize, threshold: f64) -> Option<usize> {
    points
        .iter()
        .filter(|p| p.layer == layer)
        .find(|p| p.mi_ty >= threshold)
        .map(|p| p.epoch)
}

/// Fitting-phase epochs of a paired run: the first epoch each run's
/// last-hidden-layer `I(T;Y)` reaches `fraction` of the larger of the two
/// runs' maxima.
pub fn fitting_epochs(a: &[InfoPoint], b: &[InfoPoint], fraction: f64) -> (Option<usize>, Option<usize>) {
    let last = a.iter().chain(b).map(|p| p.layer).max().unwrap_or(0);
    let peak = a
        .iter()
        .chain(b)
        .filter(|p| p.layer == last)
        .map(|p| p.mi_ty)
        .fold(0.0, f64::max);
    let t = fraction * peak;
    (first_epoch_reaching(a, last, t), first_epoch_reaching(b, last, t))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::experiment::config::{
        DatasetConfig, InstrumentationConfig, NetworkConfig, OptimizerConfig, OutputKind, SamplerConfig, Schedule,
    };
    use crate::infoplane::MiUnit;
    use crate::nn::HiddenActivation;

    pub(crate) fn small_config(kind: SamplerKind, epochs: usize) -> ExperimentConfig {
        ExperimentConfig {
            name: "small".into(),
            out_dir: None,
            dataset: DatasetConfig::synthetic(1, 0),
            network: NetworkConfig {
                layer_widths: vec![12, 5, 3, 2],
                hidden_activation: HiddenActivation::Tanh,
                output: OutputKind::Softmax,
                init_seed: 7,
            },
            optimizer: OptimizerConfig {
                step_size: 0.1,
                batch_size: 256,
                epochs,
                seed: 11,
            },
            sampler: SamplerConfig {
                kind,
                refresh_period: 2,
                ..SamplerConfig::srs()
            },
            instrumentation: InstrumentationConfig {
                gsnr_schedule: Schedule::Every(2),
                mi_schedule: Schedule::Every(1),
                growth: true,
                ..InstrumentationConfig::default()
            },
            base_dir: ".".into(),
        }
    }

    #[test]
    fn zero_epochs_records_only_epoch_zero() {
        let out = train(&small_config(SamplerKind::Srs, 0)).unwrap();
        assert_eq!(out.epochs_completed, 0);
        assert!(out.loss.iter().all(|r| r.epoch == 0));
        assert!(out.mi.iter().all(|p| p.epoch == 0));
        assert_eq!(out.mi.len(), 2);
        assert_eq!(out.gsnr.len(), 1 + 3);
        let ts = train(&small_config(SamplerKind::Ts, 0)).unwrap();
        assert_eq!(ts.partitions.len(), 1);
        assert!(ts.gsnr.iter().all(|r| r.sampler == "ts"));
    }

    #[test]
    fn identical_configs_identical_records() {
        let c = small_config(SamplerKind::Ts, 4);
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert_eq!(a.gsnr, b.gsnr);
        assert_eq!(a.mi, b.mi);
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.partitions.len(), 2);
        assert!(a.gsnr.iter().all(|r| r.sampler == "ts" && r.ratio_h_l.is_some()));
        assert!(a.mi.iter().all(|p| p.unit == MiUnit::Bits));
    }

    #[test]
    fn full_h_typicality_reproduces_srs() {
        let srs = small_config(SamplerKind::Srs, 3);
        let mut ts = small_config(SamplerKind::Ts, 3);
        ts.sampler.target_h_size = Some(4096);
        let (a, b) = (train(&srs).unwrap(), train(&ts).unwrap());
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.mi, b.mi);
    }

    #[test]
    fn growth_bound_replays_cleanly() {
        let out = train(&small_config(SamplerKind::Srs, 4)).unwrap();
        let g = out.growth.unwrap();
        assert_eq!(g.violations, 0);
        assert!(g.constants.beta2 >= 1.0 && g.constants.beta1 >= 0.0);
    }

    #[test]
    fn fitting_epochs_use_shared_peak() {
        let pt = |epoch, mi_ty| InfoPoint {
            epoch,
            layer: 2,
            mi_xt: 1.0,
            mi_ty,
            unit: MiUnit::Bits,
            estimator: "binning-30".into(),
        };
        let a = vec![pt(0, 0.1), pt(10, 0.95), pt(20, 1.0)];
        let b = vec![pt(0, 0.1), pt(10, 0.5), pt(20, 0.92)];
        assert_eq!(fitting_epochs(&a, &b, 0.9), (Some(10), Some(20)));
    }
}
