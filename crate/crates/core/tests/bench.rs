use std::path::PathBuf;

use dgcn_core::bench::{
    apply_transform, fit_stationary, fold_partition, load_csv, parse_table, run_protocol, run_protocol_with,
    run_seed, stationary_baseline, Metric, ModelKind, Protocol, ProtocolKind, TargetColumn, TargetTransform,
};
use dgcn_core::gp::PredictOptions;
use dgcn_core::linalg::Matrix;
use dgcn_core::trainer::{Dataset, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quick() -> TrainConfig {
    TrainConfig {
        max_epochs: 15,
        batch_size: 40,
        ..Default::default()
    }
}

fn one_repeat(folds: usize, transform: TargetTransform) -> Protocol {
    Protocol {
        folds,
        repeats: 1,
        transform,
        seed: 11,
        ..Default::default()
    }
}

fn smooth_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, 2, |_, _| rng.random::<f64>());
    let y = (0..n)
        .map(|i| 3.0 + (2.0 * x[(i, 0)]).sin() + 0.5 * x[(i, 1)])
        .collect();
    Dataset::new(x, y).unwrap()
}

#[test]
fn leave_one_out_on_a_line_is_nearly_exact() {
    let x = Matrix::from_fn(10, 1, |i, _| i as f64);
    let y = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
    let data = Dataset::new(x, y).unwrap();
    let p = Protocol {
        folds: 10,
        repeats: 1,
        ..Default::default()
    };
    let cfg = TrainConfig {
        max_epochs: 60,
        batch_size: 9,
        ..Default::default()
    };
    let r = stationary_baseline(&data, &p, &cfg).unwrap();
    assert_eq!(r.runs.len(), 10);
    // interior points are interpolated; the two ends extrapolate a little
    assert!(r.summary.mean < 0.5, "{}", r.summary.mean);
}

#[test]
fn same_seed_same_report() {
    let data = smooth_data(40, 1);
    let p = one_repeat(4, TargetTransform::None);
    let a = run_protocol(&data, &p, &quick()).unwrap();
    let b = run_protocol(&data, &p, &quick()).unwrap();
    let strip = |r: &dgcn_core::bench::BenchReport| {
        r.runs
            .iter()
            .map(|x| (x.run_id, x.repeat, x.fold, x.metric_value.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.summary.config_fingerprint, b.summary.config_fingerprint);
}

#[test]
fn rmse_squared_is_mse_on_every_run() {
    let data = smooth_data(40, 2);
    let p = Protocol {
        repeats: 2,
        folds: 4,
        metric: Metric::Mse,
        ..Default::default()
    };
    let r = stationary_baseline(&data, &p, &quick()).unwrap();
    assert_eq!(r.runs.len(), 8);
    for run in &r.runs {
        assert!((run.rmse * run.rmse - run.mse).abs() <= 1e-12 * run.mse.max(1.0));
        assert_eq!(run.metric_value, run.mse);
    }
    assert_eq!(r.repeat_values.len(), 2);
}

/// Re-derives run 0 from the public seeding and partition rules and scores
/// residuals by hand.
fn hand_run_zero(data: &Dataset, p: &Protocol, cfg: &TrainConfig) -> f64 {
    let y = apply_transform(&data.y, p.transform).unwrap();
    let folds = fold_partition(data.len(), p.folds, p.seed, 0);
    let train: Vec<usize> = folds[1..].iter().flatten().copied().collect();
    let test = &folds[0];
    let sub = |idx: &[usize]| {
        Dataset::new(
            Matrix::from_fn(idx.len(), data.n_inputs(), |i, j| data.x[(idx[i], j)]),
            idx.iter().map(|&i| y[i]).collect(),
        )
        .unwrap()
    };
    let run_cfg = TrainConfig {
        seed: run_seed(cfg.seed, p.seed, 0, 0),
        ..cfg.clone()
    };
    let model = fit_stationary(&sub(&train), &run_cfg).unwrap();
    let te = sub(test);
    let mean = model.predict(&te.x, None, &PredictOptions::default()).unwrap().mean;
    let sse: f64 = mean.iter().zip(&te.y).map(|(m, t)| (m - t).powi(2)).sum();
    (sse / test.len() as f64).sqrt()
}

#[test]
fn log_protocol_scores_log_residuals() {
    let data = smooth_data(36, 3);
    let p = one_repeat(3, TargetTransform::Log);
    let r = stationary_baseline(&data, &p, &quick()).unwrap();
    let hand = hand_run_zero(&data, &p, &quick());
    assert!((r.runs[0].rmse - hand).abs() < 1e-12, "{} vs {hand}", r.runs[0].rmse);
}

#[test]
fn raw_protocol_scores_raw_residuals() {
    let data = smooth_data(36, 4);
    let p = one_repeat(3, TargetTransform::None);
    let r = stationary_baseline(&data, &p, &quick()).unwrap();
    let hand = hand_run_zero(&data, &p, &quick());
    assert!((r.runs[0].rmse - hand).abs() < 1e-12, "{} vs {hand}", r.runs[0].rmse);
}

#[test]
fn log_transform_rejects_non_positive_targets() {
    let x = Matrix::from_fn(6, 1, |i, _| i as f64);
    let data = Dataset::new(x, vec![1.0, 2.0, 0.0, 3.0, 4.0, 5.0]).unwrap();
    assert!(stationary_baseline(&data, &one_repeat(3, TargetTransform::Log), &quick()).is_err());
}

fn se(a: &[f64], b: &[f64], ell: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
    (-0.5 * d2 / (ell * ell)).exp()
}

fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (a[i][i] - s).sqrt() } else { (a[i][j] - s) / l[j][j] };
        }
    }
    l
}

fn solve_spd(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = b.to_vec();
    for i in 0..n {
        z[i] = (z[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    for i in (0..n).rev() {
        z[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * z[k]).sum::<f64>()) / l[i][i];
    }
    z
}

#[test]
fn stationary_baseline_is_close_to_the_generating_gp() {
    // draw y from a known squared-exponential GP, then compare against the
    // posterior mean under the true hyperparameters on a held-out set
    let (n, ell, noise) = (120, 0.3, 1e-2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let cov: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| se(&pts[i], &pts[j], ell) + if i == j { noise + 1e-9 } else { 0.0 }).collect())
        .collect();
    let l = cholesky(&cov);
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let y: Vec<f64> = (0..n).map(|i| (0..=i).map(|k| l[i][k] * z[k]).sum()).collect();

    let (tr, te) = (100, 20);
    let ktr: Vec<Vec<f64>> = (0..tr)
        .map(|i| (0..tr).map(|j| se(&pts[i], &pts[j], ell) + if i == j { noise } else { 0.0 }).collect())
        .collect();
    let alpha = solve_spd(&cholesky(&ktr), &y[..tr]);
    let oracle_sse: f64 = (tr..n)
        .map(|s| {
            let m: f64 = (0..tr).map(|i| se(&pts[s], &pts[i], ell) * alpha[i]).sum();
            (m - y[s]).powi(2)
        })
        .sum();
    let oracle = (oracle_sse / te as f64).sqrt();

    let x = Matrix::from_fn(n, 2, |i, j| pts[i][j]);
    let data = Dataset::new(x, y).unwrap();
    let p = Protocol {
        kind: ProtocolKind::FixedSplitRepeated,
        repeats: 1,
        train_size: Some(tr),
        test_size: Some(te),
        ..Default::default()
    };
    let cfg = TrainConfig {
        batch_size: tr,
        max_epochs: 300,
        patience: 20,
        ..Default::default()
    };
    let r = stationary_baseline(&data, &p, &cfg).unwrap();
    assert!(r.summary.mean <= 1.2 * oracle, "baseline {} vs oracle {oracle}", r.summary.mean);
}

#[test]
fn constant_target_scores_zero() {
    let x = Matrix::from_fn(30, 2, |i, j| ((i * 7 + j * 3) % 11) as f64);
    let data = Dataset::new(x, vec![4.25; 30]).unwrap();
    let r = run_protocol(&data, &one_repeat(3, TargetTransform::None), &quick()).unwrap();
    assert!(r.summary.mean < 1e-9, "{}", r.summary.mean);
}

#[test]
fn reports_have_the_declared_shape() {
    let data = smooth_data(30, 6);
    let p = Protocol {
        folds: 3,
        repeats: 2,
        ..Default::default()
    };
    let seen = std::sync::atomic::AtomicUsize::new(0);
    let count = |_: &dgcn_core::bench::RunRecord| {
        seen.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    };
    let r = run_protocol_with(&data, &p, &quick(), ModelKind::Stationary, Some(&count)).unwrap();
    assert_eq!(seen.into_inner(), 6);

    let csv = parse_table(r.to_csv().as_bytes()).unwrap();
    assert_eq!(csv.headers, ["run_id", "repeat", "fold", "metric_value", "seconds"]);
    assert_eq!(csv.values.rows(), 6);

    let json: serde_json::Value = serde_json::from_str(&r.summary_json().unwrap()).unwrap();
    for key in ["min", "mean", "max", "std", "config_fingerprint"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let s = &r.summary;
    assert!(s.min <= s.mean && s.mean <= s.max);
}

fn dataset_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn boston_file_has_the_expected_shape() {
    let path = dataset_path("boston.csv");
    if !path.exists() {
        eprintln!("skipping: {} not present (run scripts/fetch_datasets.py)", path.display());
        return;
    }
    let d = load_csv(&path, &TargetColumn::Name("MEDV".into())).unwrap();
    assert_eq!((d.len(), d.n_inputs()), (506, 13));
    let p = Protocol::preset("table3-log").unwrap();
    assert!(p.validate(d.len()).is_ok());
}
