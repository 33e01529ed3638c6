//! The eight acceptance criteria, run in order at their stated tolerances.
//! Each prints one PASS/FAIL line to stdout (uncaptured, so it shows under
//! plain `cargo test`).
//!
//! Criterion 2 fails as stated: the ordering it asserts is false for some
//! finite populations. The test asserts that every failure is one the exact
//! ordering condition predicts, so the suite stays green while the line
//! reads FAIL.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use typsgd::data::{pattern_inputs, Split};
use typsgd::experiment::{fitting_epochs, run_train, run_verify, train, ExperimentConfig, Suite, TrainOutcome};
use typsgd::gsnr::{check_assumption1, verify_theorem1, GsnrMethod, OrderingCondition};
use typsgd::infoplane::{input_identities, mi_binning, mi_gaussian_mixture, InfoPoint, MiEstimatorSpec};
use typsgd::linalg::Matrix;
use typsgd::nn::{GradientVector, HiddenActivation, LayerFilter};
use typsgd::sampling::{analytic_moments_srs, Partition};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Line {
    id: u8,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    limit: Option<Duration>,
}

impl Line {
    fn within_time(&self) -> bool {
        self.limit.is_none_or(|l| self.elapsed <= l)
    }

    fn print(&self) {
        let ok = self.passed && self.within_time();
        let limit = self
            .limit
            .map_or(String::new(), |l| format!(" / limit {} s", l.as_secs()));
        let mut out = std::io::stdout().lock();
        writeln!(
            out,
            "{} {} {}: {} [{:.1} s{}]",
            if ok { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            limit
        )
        .unwrap();
        out.flush().unwrap();
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn seeded(name: &str, seed: u64) -> ExperimentConfig {
    let mut c = config(name);
    c.override_seed(seed);
    c
}

fn moment_oracle() -> (bool, String) {
    let report = run_verify(Suite::MomentsOracle, None).unwrap();
    let g: Vec<GradientVector> = [1.0, 2.0, 3.0, 6.0]
        .iter()
        .map(|&v| GradientVector::from_values(vec![v]))
        .collect();
    let v = analytic_moments_srs(&g, 2).unwrap().variance;
    let seven_sixths = (v - 7.0 / 6.0).abs() < 1e-12;
    let worst: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| c.name.contains("random"))
        .map(|c| c.detail.as_str())
        .collect();
    (
        report.passed && seven_sixths,
        format!(
            "[1,2,3,6] m=2 variance {v:.12} (7/6); 100 srs + 100 ts instances, {}",
            worst.join(", ")
        ),
    )
}

/// `Σ_L g = 0`, equal stratum mean squared norms and `n1/|H| >= m/N`.
fn balanced(rng: &mut ChaCha8Rng) -> (Vec<GradientVector>, Partition) {
    let n_h = rng.random_range(1..=5);
    let n_l = rng.random_range(2..=6);
    let dim = rng.random_range(1..=4);
    let mut rows: Vec<Vec<f64>> = (0..n_h + n_l - 1)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let last: Vec<f64> = (0..dim)
        .map(|k| -rows[n_h..].iter().map(|r| r[k]).sum::<f64>())
        .collect();
    rows.push(last);
    let msq = |rs: &[Vec<f64>]| rs.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / rs.len() as f64;
    let c = (msq(&rows[..n_h]) / msq(&rows[n_h..])).sqrt();
    for r in &mut rows[n_h..] {
        r.iter_mut().for_each(|v| *v *= c);
    }
    let g: Vec<GradientVector> = rows.into_iter().map(GradientVector::from_values).collect();
    let n1 = rng.random_range(1..=n_h);
    let n2 = rng.random_range(0..=(n1 * n_l / n_h).min(n_l));
    let p = Partition::with_gradients((0..n_h).collect(), (n_h..n_h + n_l).collect(), n1, n2, &g).unwrap();
    (g, p)
}

fn theorem1() -> (bool, String) {
    let g: Vec<GradientVector> = [4.0, 8.0, 3.0, -3.0]
        .iter()
        .map(|&v| GradientVector::from_values(vec![v]))
        .collect();
    let p = Partition::with_gradients(vec![0, 1], vec![2, 3], 1, 1, &g).unwrap();
    let w = verify_theorem1(&g, &p, LayerFilter::Whole, GsnrMethod::Analytic).unwrap();
    let (ts, srs) = (w.gsnr_ts.as_f64(), w.gsnr_srs.as_f64());
    let worked = (ts - 1.6641).abs() < 1e-3 && (srs - 1.3203).abs() < 1e-3;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut held, mut total, mut unexplained) = (0, 0, 0);
    while total < 200 {
        let (g, p) = balanced(&mut rng);
        let a = check_assumption1(&g, &p, LayerFilter::Whole).unwrap();
        assert!(p.residual_norm.unwrap() < 1e-12 && p.density_ok);
        assert!((a.ratio.unwrap() - 1.0).abs() < 1e-9);
        let c = verify_theorem1(&g, &p, LayerFilter::Whole, GsnrMethod::Analytic).unwrap();
        total += 1;
        let holds = c.holds == Some(true);
        held += usize::from(holds);
        if !holds {
            let cond = OrderingCondition::new(p.h_indices.len(), p.l_indices.len(), p.n1, p.n2).unwrap();
            let msq = g.iter().map(GradientVector::norm_sq).sum::<f64>() / g.len() as f64;
            let q = GradientVector::mean(&g).unwrap().norm_sq() / msq;
            if cond.margin(q) >= -1e-12 {
                unexplained += 1;
            }
        }
    }
    // the property is false; every reversal must be one the exact condition predicts
    assert_eq!(
        unexplained, 0,
        "a reversal the exact ordering condition does not predict"
    );
    assert!(held < total, "no reversals found; the documented failure has changed");
    assert!(worked, "worked instance gave ({ts}, {srs})");
    (
        held == total && worked,
        format!(
            "worked instance ({ts:.5}, {srs:.5}); ordering held in {held}/{total} balanced instances, \
             the {} reversals all predicted by the exact finite-population condition",
            total - held
        ),
    )
}

fn gradient_exactness() -> (bool, String) {
    let report = run_verify(Suite::GradCheck, None).unwrap();
    let d = report
        .checks
        .iter()
        .map(|c| c.detail.as_str())
        .collect::<Vec<_>>()
        .join("; ");
    (
        report.passed && report.checks.len() == 1,
        format!("20 nets, tanh/relu hidden, sigmoid/softmax heads: {d}"),
    )
}

fn mi_sanity() -> (bool, String) {
    let spec = MiEstimatorSpec::binning(30);
    let n = 1000;
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let ids: Vec<usize> = (0..n).collect();
    let t = Matrix::from_vec(n, 1, y.iter().map(|&c| if c == 1 { 0.5 } else { -0.5 }).collect()).unwrap();
    let (_, ty) = mi_binning(&t, HiddenActivation::Tanh, &ids, &y, &spec).unwrap();

    let constant = Matrix::from_vec(n, 3, vec![0.25; 3 * n]).unwrap();
    let (cx, cy) = mi_binning(&constant, HiddenActivation::Tanh, &ids, &y, &spec).unwrap();

    let x = pattern_inputs();
    let xid = input_identities(&x);
    let labels: Vec<usize> = (0..x.rows()).map(|i| i % 2).collect();
    let (ix, _) = mi_binning(&x, HiddenActivation::Tanh, &xid, &labels, &spec).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = 200;
    let cl: Vec<usize> = (0..2 * k).map(|i| i / k).collect();
    let pts: Vec<f64> = cl
        .iter()
        .flat_map(|&c| {
            let centre = 100.0 * c as f64;
            [
                centre + 1e-3 * rng.sample::<f64, _>(StandardNormal),
                1e-3 * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    let h = Matrix::from_vec(2 * k, 2, pts).unwrap();
    let (gx, gy) = mi_gaussian_mixture(&h, &cl, 0.1).unwrap();
    let ln2 = std::f64::consts::LN_2;

    let ok = (ty - 1.0).abs() <= 1e-9
        && cx.abs() <= 1e-12
        && cy.abs() <= 1e-12
        && (ix - 12.0).abs() <= 1e-9
        && (gx - ln2).abs() <= 0.01
        && (gy - ln2).abs() <= 0.01;
    (
        ok,
        format!(
            "T=Y binary {ty:.12} bit; constant ({cx:e}, {cy:e}); 4096 patterns {ix:.12} bits; \
             two clusters ({gx:.4}, {gy:.4}) nats vs ln 2 = {ln2:.4}"
        ),
    )
}

fn last_layer_mi_ty(points: &[InfoPoint], epoch: usize) -> Option<f64> {
    let last = points.iter().map(|p| p.layer).max()?;
    points
        .iter()
        .find(|p| p.layer == last && p.epoch == epoch)
        .map(|p| p.mi_ty)
}

fn speedup(ts: &[TrainOutcome], srs: &[TrainOutcome]) -> (bool, String) {
    let mut wins = 0;
    let mut parts = Vec::new();
    for ((a, b), s) in ts.iter().zip(srs).zip(SEEDS) {
        let (ea, eb) = fitting_epochs(&a.mi, &b.mi, 0.9);
        let win = matches!((ea, eb), (Some(x), Some(y)) if (x as f64) <= 0.9 * y as f64);
        wins += usize::from(win);
        let fmt = |e: Option<usize>| e.map_or("never".to_string(), |v| v.to_string());
        let ratio = match (ea, eb) {
            (Some(x), Some(y)) if y > 0 => format!("{:.2}", x as f64 / y as f64),
            _ => "-".into(),
        };
        parts.push(format!("seed {s}: ts {} / srs {} = {ratio}", fmt(ea), fmt(eb)));
    }
    (
        wins >= 4,
        format!("{wins}/5 seeds with ratio <= 0.9 ({})", parts.join("; ")),
    )
}

fn assumption_band(ts: &[TrainOutcome], epochs: usize) -> (bool, String) {
    let cutoff = epochs / 3;
    let (mut inside, mut total) = (0, 0);
    let mut per_seed = Vec::new();
    for (o, s) in ts.iter().zip(SEEDS) {
        let vals: Vec<f64> = o
            .gsnr
            .iter()
            .filter(|r| matches!(r.layer, LayerFilter::Layer(_)) && r.epoch <= cutoff)
            .filter_map(|r| r.ratio_h_l)
            .collect();
        let k = vals.iter().filter(|v| (0.5..=2.0).contains(*v)).count();
        per_seed.push(format!("seed {s} {k}/{}", vals.len()));
        inside += k;
        total += vals.len();
    }
    let frac = inside as f64 / total.max(1) as f64;
    (
        total > 0 && frac >= 0.9,
        format!(
            "{inside}/{total} = {:.1}% of layer checkpoints at epoch <= {cutoff} in [0.5, 2], pooled over 5 ts runs ({})",
            100.0 * frac,
            per_seed.join(", ")
        ),
    )
}

fn final_val_accuracy(o: &TrainOutcome) -> f64 {
    o.loss
        .iter()
        .rfind(|r| r.split == Split::Validation)
        .map_or(0.0, |r| r.accuracy)
}

fn pendigits() -> (bool, String) {
    let (mut wins, mut min_acc) = (0, f64::INFINITY);
    let mut parts = Vec::new();
    for s in SEEDS {
        let ts = train(&seeded("pendigits-ts.toml", s)).unwrap();
        let srs = train(&seeded("pendigits-srs.toml", s)).unwrap();
        let (a, b) = (
            last_layer_mi_ty(&ts.mi, 15).unwrap(),
            last_layer_mi_ty(&srs.mi, 15).unwrap(),
        );
        wins += usize::from(a >= b);
        let (va, vb) = (final_val_accuracy(&ts), final_val_accuracy(&srs));
        min_acc = min_acc.min(va).min(vb);
        parts.push(format!("seed {s}: mi_ty {a:.4} vs {b:.4}, val acc {va:.3}/{vb:.3}"));
    }
    (
        wins >= 3 && min_acc > 0.85,
        format!(
            "ts >= srs at epoch 15 in {wins}/5 seeds, lowest val accuracy {min_acc:.3} ({})",
            parts.join("; ")
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["synthetic-ts.toml", "pendigits-srs.toml"] {
        let c = config(name);
        let (a, b) = (
            tmp.path().join(format!("{name}-a")),
            tmp.path().join(format!("{name}-b")),
        );
        run_train(&c, &a).unwrap();
        run_train(&c, &b).unwrap();
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        let same = !fa.is_empty() && fa == fb;
        ok &= same;
        parts.push(format!(
            "{name}: {} csv files {}",
            fa.len(),
            if same { "identical" } else { "differ" }
        ));
    }
    (ok, parts.join("; "))
}

fn timed(id: u8, name: &'static str, limit: Option<u64>, f: impl FnOnce() -> (bool, String)) -> Line {
    let start = Instant::now();
    let (passed, detail) = f();
    let line = Line {
        id,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
        limit: limit.map(Duration::from_secs),
    };
    line.print();
    line
}

#[test]
fn acceptance() {
    let mut lines = vec![
        timed(1, "moment-oracle equivalence", Some(10), moment_oracle),
        timed(2, "ts-vs-srs ordering on balanced instances", Some(10), theorem1),
        timed(3, "gradient exactness", Some(30), gradient_exactness),
        timed(4, "mi estimator sanity", Some(30), mi_sanity),
    ];

    let start = Instant::now();
    let ts: Vec<TrainOutcome> = SEEDS
        .iter()
        .map(|&s| train(&seeded("synthetic-ts.toml", s)).unwrap())
        .collect();
    let srs: Vec<TrainOutcome> = SEEDS
        .iter()
        .map(|&s| train(&seeded("synthetic-srs.toml", s)).unwrap())
        .collect();
    let shared = start.elapsed();
    let epochs = config("synthetic-ts.toml").optimizer.epochs;
    for (id, name, (passed, detail)) in [
        (5, "fitting-phase speedup", speedup(&ts, &srs)),
        (
            6,
            "assumption-1 band on the synthetic run",
            assumption_band(&ts, epochs),
        ),
    ] {
        let line = Line {
            id,
            name,
            passed,
            detail,
            elapsed: shared,
            limit: Some(Duration::from_secs(20 * 60)),
        };
        line.print();
        lines.push(line);
    }

    lines.push(timed(7, "pendigits smoke", Some(15 * 60), pendigits));
    lines.push(timed(8, "end-to-end determinism", None, determinism));

    let red: Vec<u8> = lines
        .iter()
        .filter(|l| !(l.passed && l.within_time()))
        .map(|l| l.id)
        .collect();
    // criterion 2 is false as stated; its failure mode is asserted inside `theorem1`
    assert_eq!(red, vec![2], "unexpected acceptance failures");
}
