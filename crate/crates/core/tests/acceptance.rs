//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Run a subset by number: `cargo test --test acceptance -- 1 4 12`.
//! Dataset criteria read `data/boston.csv` and `data/concrete.csv` (see
//! `scripts/fetch_datasets.py`) or the paths in DGCN_BOSTON / DGCN_CONCRETE.
//! The gap-filling criterion reads DGCN_CATS_SERIES and DGCN_CATS_TRUTH.
//!
//! Correctness criteria (1-4, 10-12) make the run exit non-zero when they
//! fail. Benchmark criteria (5-9) only report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dgcn_core::bench::{
    load_csv, run_protocol, stationary_baseline, timing_benchmark, BatchSize, Protocol, TargetColumn,
    TimingConfig,
};
use dgcn_core::gp::{nll, nll_grad, predict, GpBatch, HyperField, PredictOptions, Posterior, SIGMA2_FLOOR};
use dgcn_core::hypernet::{softplus, Activation, Mlp, MlpParams, NetSpec, RegularizerSpec};
use dgcn_core::kernels::{kernel_value, KernelId, KernelSet};
use dgcn_core::linalg::Matrix;
use dgcn_core::timeseries::{cats_protocol, lag_embed, read_series, LagSpec};
use dgcn_core::trainer::{fit, load, predict_batched, predict_full, save, Dataset, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Independent dense oracle: Gaussian elimination with partial pivoting.

/// Solves A X = B for several right-hand sides and returns (X, ln|det A|).
fn lu_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let m = b[0].len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut b: Vec<Vec<f64>> = b.to_vec();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        let piv = a[c][c];
        logdet += piv.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / piv;
            if f == 0.0 {
                continue;
            }
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            for k in 0..m {
                b[r][k] -= f * b[c][k];
            }
        }
    }
    let mut x = vec![vec![0.0; m]; n];
    for r in (0..n).rev() {
        for k in 0..m {
            let s: f64 = (r + 1..n).map(|j| a[r][j] * x[j][k]).sum();
            x[r][k] = (b[r][k] - s) / a[r][r];
        }
    }
    (x, logdet)
}

/// Textbook stationary GP with one length-scale vector and one noise level.
struct StationaryOracle {
    kernel: KernelId,
    theta: Vec<f64>,
    sigma2: f64,
}

impl StationaryOracle {
    fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.theta)
            .map(|((p, q), t)| (t * (p - q)).powi(2))
            .sum();
        kernel_value(self.kernel, d2.sqrt())
    }

    fn cov(&self, x: &Matrix) -> Vec<Vec<f64>> {
        let n = x.rows();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| self.k(x.row(i), x.row(j)) + if i == j { self.sigma2 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn nll(&self, x: &Matrix, y: &[f64]) -> f64 {
        let rhs: Vec<Vec<f64>> = y.iter().map(|&v| vec![v]).collect();
        let (alpha, logdet) = lu_solve(&self.cov(x), &rhs);
        let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b[0]).sum();
        0.5 * fit + 0.5 * logdet + 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Latent mean and variance at each test point.
    fn predict(&self, x: &Matrix, y: &[f64], xs: &Matrix) -> (Vec<f64>, Vec<f64>) {
        let n = x.rows();
        let m = xs.rows();
        // columns: y, then k(X, x*_j)
        let rhs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                std::iter::once(y[i])
                    .chain((0..m).map(|j| self.k(x.row(i), xs.row(j))))
                    .collect()
            })
            .collect();
        let (sol, _) = lu_solve(&self.cov(x), &rhs);
        let mut mean = vec![0.0; m];
        let mut var = vec![0.0; m];
        for j in 0..m {
            for i in 0..n {
                let kij = rhs[i][j + 1];
                mean[j] += kij * sol[i][0];
                var[j] += kij * sol[i][j + 1];
            }
            var[j] = (self.k(xs.row(j), xs.row(j)) - var[j]).max(0.0);
        }
        (mean, var)
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

/// A network whose output ignores its input: zero last-layer weights.
fn constant_net(spec: &NetSpec, n_in: usize, bias: &[f64], rng: &mut ChaCha8Rng) -> Mlp {
    let mut net = Mlp::new(spec, n_in, bias.len(), rng);
    let last = net.params.weights.len() - 1;
    net.params.weights[last] = Matrix::zeros(bias.len(), net.params.weights[last].cols());
    net.params.biases[last] = bias.to_vec();
    net
}

fn hyper_from_nets(theta: &Mlp, sigma: &Mlp, x: &Matrix) -> HyperField {
    let t = theta.predict(x).unwrap();
    let s = sigma.predict(x).unwrap();
    HyperField::new(t, s.as_slice().iter().map(|v| v + SIGMA2_FLOOR).collect()).unwrap()
}

// ---------------------------------------------------------------------------

fn c1_stationary_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut problems = 0;
    for &kernel in &KernelId::ALL {
        let set = KernelSet::single(kernel);
        for _ in 0..50 {
            let n = rng.random_range(2..=30);
            let nv = rng.random_range(1..=3);
            let x = uniform_matrix(n, nv, &mut rng);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let xs = uniform_matrix(8, nv, &mut rng);
            let theta: Vec<f64> = (0..nv).map(|_| rng.random_range(0.5..3.0)).collect();
            let rho: f64 = rng.random_range(-5.0..0.0);
            let theta_net = constant_net(&NetSpec::theta_default(), nv, &theta, &mut rng);
            let sigma_net = constant_net(&NetSpec::sigma_default(), nv, &[rho], &mut rng);

            let batch = GpBatch::new(x.clone(), y.clone(), hyper_from_nets(&theta_net, &sigma_net, &x)).unwrap();
            let star = hyper_from_nets(&theta_net, &sigma_net, &xs);
            let got_nll = nll(&batch, &set).unwrap();
            let got = predict(&batch, &xs, &star, &set, &PredictOptions::default()).unwrap();

            let oracle = StationaryOracle {
                kernel,
                theta,
                sigma2: softplus(rho) + SIGMA2_FLOOR,
            };
            let want_nll = oracle.nll(&x, &y);
            let (mean, var) = oracle.predict(&x, &y, &xs);
            worst = worst.max((got_nll - want_nll).abs());
            for j in 0..xs.rows() {
                worst = worst.max((got.mean[j] - mean[j]).abs());
                worst = worst.max((got.variance[j] - var[j]).abs());
            }
            problems += 1;
        }
    }
    verdict(
        worst < 1e-10,
        format!("{problems} problems, max |diff| in NLL, mean, variance = {worst:.2e} (tol 1e-10)"),
    )
}

fn c2_gradient_fidelity() -> Verdict {
    let configs: Vec<(String, KernelSet)> = KernelId::ALL
        .iter()
        .map(|&k| (k.name().to_string(), KernelSet::single(k)))
        .chain(std::iter::once(("sum of five".to_string(), KernelSet::default())))
        .collect();
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut checked = 0usize;
    for (name, set) in &configs {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = rng.random_range(10..=12);
            let nv = 2;
            let x = uniform_matrix(n, nv, &mut rng);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let theta_net = Mlp::new(&NetSpec::theta_default(), nv, nv * set.len(), &mut rng);
            let sigma_net = Mlp::new(&NetSpec::sigma_default(), nv, 1, &mut rng);

            let reg = RegularizerSpec::NONE;
            let (t_out, t_tape) = theta_net.forward_train(&x, &reg, &mut rng).unwrap();
            let (s_out, s_tape) = sigma_net.forward_train(&x, &reg, &mut rng).unwrap();
            let hyper = HyperField::new(t_out, s_out.as_slice().iter().map(|v| v + SIGMA2_FLOOR).collect()).unwrap();
            let batch = GpBatch::new(x.clone(), y.clone(), hyper).unwrap();
            let g = nll_grad(&batch, set, &theta_net, &t_tape, &sigma_net, &s_tape).unwrap();

            let objective = |t: &Mlp, s: &Mlp| {
                let b = GpBatch::new(x.clone(), y.clone(), hyper_from_nets(t, s, &x)).unwrap();
                nll(&b, set).unwrap()
            };
            for which in 0..2 {
                let grads = if which == 0 { &g.theta_net } else { &g.sigma_net };
                let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.to_vec()).collect();
                let base = if which == 0 { &theta_net } else { &sigma_net };
                for (blk, an_block) in analytic.iter().enumerate() {
                    for (i, &an) in an_block.iter().enumerate() {
                        let net_at = |delta: f64| {
                            let mut net = base.clone();
                            net.params = perturbed(&base.params, blk, i, delta);
                            net
                        };
                        let eval = |delta: f64| {
                            let net = net_at(delta);
                            if which == 0 {
                                objective(&net, &sigma_net)
                            } else {
                                objective(&theta_net, &net)
                            }
                        };
                        // shrink the step until no ReLU unit switches inside it
                        let pattern = relu_pattern(base, &x);
                        let mut h = 1e-2;
                        while h > 1e-9 && [h, -h].iter().any(|&d| relu_pattern(&net_at(d), &x) != pattern) {
                            h /= 10.0;
                        }
                        let fd = ridders(eval, h);
                        if fd.abs() <= 1e-8 {
                            continue;
                        }
                        checked += 1;
                        let rel = (an - fd).abs() / fd.abs();
                        if rel > worst {
                            worst = rel;
                            worst_at = format!(
                                "{name}, seed {seed}, {} net block {blk} index {i}: analytic {an:.6e}, fd {fd:.6e}",
                                if which == 0 { "theta" } else { "sigma" }
                            );
                        }
                    }
                }
            }
        }
    }
    verdict(
        worst < 1e-4,
        format!("{checked} coordinates with |FD| > 1e-8, max relative error {worst:.2e} (tol 1e-4); worst at {worst_at}"),
    )
}

/// Central differences at shrinking steps with polynomial extrapolation to
/// zero step; returns the estimate with the smallest error estimate.
fn ridders(f: impl Fn(f64) -> f64, h0: f64) -> f64 {
    const SHRINK: f64 = 1.4;
    const ROWS: usize = 10;
    let central = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let mut table = [[0.0f64; ROWS]; ROWS];
    let mut h = h0;
    table[0][0] = central(h);
    let mut best = table[0][0];
    let mut err = f64::INFINITY;
    for i in 1..ROWS {
        h /= SHRINK;
        table[0][i] = central(h);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (table[j][i] - table[j - 1][i]).abs().max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    best
}

/// Sign of every ReLU pre-activation over the batch, from a plain forward pass.
fn relu_pattern(net: &Mlp, x: &Matrix) -> Vec<bool> {
    let mut out = Vec::new();
    for r in 0..x.rows() {
        let mut a = x.row(r).to_vec();
        for (l, spec) in net.specs.iter().enumerate() {
            let w = &net.params.weights[l];
            let z: Vec<f64> = (0..spec.out_units)
                .map(|o| net.params.biases[l][o] + w.row(o).iter().zip(&a).map(|(p, q)| p * q).sum::<f64>())
                .collect();
            a = match spec.activation {
                Activation::Relu => {
                    out.extend(z.iter().map(|&v| v > 0.0));
                    z.iter().map(|v| v.max(0.0)).collect()
                }
                Activation::Sigmoid => z.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
                Activation::Softplus => z.iter().map(|&v| softplus(v)).collect(),
                Activation::Linear => z,
            };
        }
    }
    out
}

fn perturbed(p: &MlpParams, block: usize, index: usize, delta: f64) -> MlpParams {
    let mut q = p.clone();
    q.blocks_mut()[block][index] += delta;
    q
}

fn c3_psd_robustness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 500;
    let mut ok = 0;
    let mut worst_jitter: f64 = 0.0;
    for _ in 0..draws {
        let n = rng.random_range(2..=60);
        let nv = rng.random_range(1..=5);
        let set = if rng.random_bool(0.5) {
            KernelSet::default()
        } else {
            KernelSet::single(KernelId::ALL[rng.random_range(0..5)])
        };
        let x = uniform_matrix(n, nv, &mut rng);
        let theta = Matrix::from_fn(n, nv * set.len(), |_, _| {
            let mag = 10f64.powf(rng.random_range(-1.0..1.0));
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        });
        let sigma2: Vec<f64> = (0..n)
            .map(|_| SIGMA2_FLOOR + 10f64.powf(rng.random_range(-6.0..0.0)))
            .collect();
        let batch = GpBatch::new(x, vec![0.0; n], HyperField::new(theta, sigma2).unwrap()).unwrap();
        if let Ok(post) = Posterior::new(&batch, &set) {
            worst_jitter = worst_jitter.max(post.jitter_used());
            if post.jitter_used() <= 1e-6 {
                ok += 1;
            }
        }
    }
    let frac = ok as f64 / draws as f64;
    verdict(
        frac >= 0.99,
        format!("{ok}/{draws} factorized with jitter <= 1e-6 ({:.1}%, need 99%); largest jitter {worst_jitter:.0e}", frac * 100.0),
    )
}

fn c4_knn_exactness() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let n = rng.random_range(30..=80);
        let nv = rng.random_range(1..=4);
        let x = uniform_matrix(n, nv, &mut rng);
        let y = (0..n).map(|i| x.row(i).iter().map(|v| (3.0 * v).sin()).sum()).collect();
        let data = Dataset::new(x, y).unwrap();
        let cfg = TrainConfig {
            max_epochs: 5,
            batch_size: 25,
            seed,
            ..Default::default()
        };
        let model = fit(&data, &cfg).unwrap();
        let probe = uniform_matrix(25, nv, &mut rng);
        let opts = PredictOptions::default();
        let a = predict_batched(&model, &probe, Some(n), &opts).unwrap();
        let b = predict_full(&model, &probe, &opts).unwrap();
        for j in 0..probe.rows() {
            for (u, v) in [
                (a.mean[j], b.mean[j]),
                (a.variance[j], b.variance[j]),
                (a.ci_low[j], b.ci_low[j]),
                (a.ci_high[j], b.ci_high[j]),
            ] {
                worst = worst.max((u - v).abs());
            }
        }
    }
    verdict(worst < 1e-12, format!("20 models, max |batched - full| = {worst:.2e} (tol 1e-12)"))
}

/// Smooth sine on [0, 1], five times the frequency on [1, 2].
fn piecewise(x: f64) -> f64 {
    if x < 1.0 {
        (2.0 * std::f64::consts::PI * x).sin()
    } else {
        (10.0 * std::f64::consts::PI * x).sin()
    }
}

fn c5_nonstationarity() -> Verdict {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let xs: Vec<f64> = (0..120).map(|_| rng.random_range(0.0..2.0)).collect();
        let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = (0..120).partition(|i| i % 4 != 0);
        let make = |idx: &[usize]| {
            Dataset::new(
                Matrix::from_fn(idx.len(), 1, |i, _| xs[idx[i]]),
                idx.iter().map(|&i| piecewise(xs[i])).collect(),
            )
            .unwrap()
        };
        let (train, test) = (make(&train_idx), make(&test_idx));
        let cfg = TrainConfig {
            batch_size: train.len(),
            max_epochs: 2000,
            seed,
            ..Default::default()
        };
        let opts = PredictOptions::default();
        let rmse = |mean: Vec<f64>| {
            (mean.iter().zip(&test.y).map(|(m, y)| (m - y).powi(2)).sum::<f64>() / test.len() as f64).sqrt()
        };
        let dgcn = rmse(predict_batched(&fit(&train, &cfg).unwrap(), &test.x, None, &opts).unwrap().mean);
        let stat = rmse(
            dgcn_core::bench::fit_stationary(&train, &cfg)
                .unwrap()
                .predict(&test.x, None, &opts)
                .unwrap()
                .mean,
        );
        if dgcn <= stat {
            wins += 1;
        }
        lines.push(format!("{dgcn:.3}/{stat:.3}"));
    }
    verdict(
        wins >= 8,
        format!("DGCN <= stationary on {wins}/10 seeds (need 8); test RMSE dgcn/stationary: {}", lines.join(" ")),
    )
}

fn dataset_path(env: &str, file: &str) -> PathBuf {
    std::env::var_os(env)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(file))
}

fn c6_boston() -> Verdict {
    let path = dataset_path("DGCN_BOSTON", "boston.csv");
    let Ok(data) = load_csv(&path, &TargetColumn::Name("MEDV".into())) else {
        return verdict(false, format!("not run: {} unavailable (scripts/fetch_datasets.py)", path.display()));
    };
    let t = Instant::now();
    let r = run_protocol(&data, &Protocol::preset("table3-raw").unwrap(), &TrainConfig::default()).unwrap();
    let s = &r.summary;
    verdict(
        (2.0..=3.4).contains(&s.mean),
        format!(
            "20x10-fold RMSE {:.3} ± {:.3} (band [2.0, 3.4]; published 2.40 ± 0.061) in {:.0}s",
            s.mean,
            s.std,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c7_concrete() -> Verdict {
    let path = dataset_path("DGCN_CONCRETE", "concrete.csv");
    let Ok(data) = load_csv(&path, &TargetColumn::Last) else {
        return verdict(false, format!("not run: {} unavailable (scripts/fetch_datasets.py)", path.display()));
    };
    let t = Instant::now();
    let p = Protocol::preset("table4").unwrap();
    let cfg = TrainConfig::default();
    let dgcn = run_protocol(&data, &p, &cfg).unwrap().summary;
    let stat = stationary_baseline(&data, &p, &cfg).unwrap().summary;
    let in_band = (3.3..=4.8).contains(&dgcn.mean);
    verdict(
        dgcn.mean <= 5.21 && dgcn.mean < stat.mean,
        format!(
            "20x10-fold RMSE {:.3} ± {:.3} vs stationary {:.3} ± {:.3} (need <= 5.21 and below stationary; \
             target band 3.3-4.8 {}; published 3.67 ± 0.06) in {:.0}s",
            dgcn.mean,
            dgcn.std,
            stat.mean,
            stat.std,
            if in_band { "met" } else { "missed" },
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c8_cats() -> Verdict {
    let (Some(series), Some(truth)) = (std::env::var_os("DGCN_CATS_SERIES"), std::env::var_os("DGCN_CATS_TRUTH")) else {
        return verdict(
            false,
            "not run: the competition series is not available to this build (set DGCN_CATS_SERIES and DGCN_CATS_TRUTH)",
        );
    };
    let series = read_series(series).unwrap();
    let truth = read_series(truth).unwrap();
    let lags = vec![LagSpec::default(); 5];
    let r = cats_protocol(&series, &lags, &TrainConfig::default(), Default::default(), Some(&truth)).unwrap();
    let e1 = r.e1.unwrap();
    verdict(
        e1 <= 1000.0,
        format!("E1 = {e1:.1} (need <= 1000, aspirational <= 450; published 368)"),
    )
}

fn c9_timing() -> Verdict {
    let base = TrainConfig::default();
    let run = |sizes: Vec<usize>, b: BatchSize, epochs: usize| {
        let cfg = TimingConfig {
            sizes,
            batch_sizes: vec![b],
            epochs,
            ..Default::default()
        };
        timing_benchmark(&cfg, &base).unwrap()
    };
    let mini = run(vec![3200, 25_600], BatchSize::Fixed(200), 100);
    let (a, b) = (mini[0].seconds.unwrap(), mini[1].seconds.unwrap());
    let mini_ratio = b / a;
    // full-batch epochs cost the same every epoch, so a few suffice
    let full = run(vec![1600, 3200], BatchSize::Full, 2);
    let full_ratio = full[1].sec_per_epoch.unwrap() / full[0].sec_per_epoch.unwrap();
    verdict(
        mini_ratio <= 12.0 && full_ratio > 2.0,
        format!(
            "N_b=200: {a:.1}s at N=3200, {b:.1}s at N=25600, ratio {mini_ratio:.2} (need <= 12); \
             N_b=N: {:.2}s/epoch at 1600, {:.2}s/epoch at 3200, ratio {full_ratio:.2} (need > 2)",
            full[0].sec_per_epoch.unwrap(),
            full[1].sec_per_epoch.unwrap()
        ),
    )
}

fn c10_lag_table() -> Verdict {
    let series = [2.0, 3.0, 1.0, 6.0, 7.0, 3.0, 9.0, 1.0];
    let l = lag_embed(&series, &LagSpec::with_horizons(2, vec![0, 1, 2])).unwrap();
    // t = 3 (1-based) is the first row with two lags behind it
    let row = l.times.iter().position(|&t| t == 2).unwrap();
    let inputs = l.x.row(row).to_vec();
    let outputs: Vec<f64> = (0..3).map(|h| l.targets[(row, h)]).collect();
    verdict(
        inputs == [2.0, 3.0] && outputs == [1.0, 6.0, 7.0],
        format!("row t=3: inputs {inputs:?}, outputs {outputs:?} (want [2, 3], [1, 6, 7])"),
    )
}

fn c11_persistence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = uniform_matrix(60, 3, &mut rng);
    let y = (0..60).map(|i| x[(i, 0)].sin() + x[(i, 1)] * x[(i, 2)]).collect();
    let data = Dataset::new(x, y).unwrap();
    let model = fit(
        &data,
        &TrainConfig {
            max_epochs: 10,
            batch_size: 20,
            ..Default::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dgcn");
    save(&model, &path).unwrap();
    let back = load(&path).unwrap();
    let probe = Matrix::from_fn(125, 3, |i, j| ((i / 5usize.pow(j as u32)) % 5) as f64 / 4.0);
    let opts = PredictOptions::default();
    let a = predict_batched(&model, &probe, None, &opts).unwrap();
    let b = predict_batched(&back, &probe, None, &opts).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let identical = bits(&a.mean) == bits(&b.mean) && bits(&a.variance) == bits(&b.variance);

    let bytes = std::fs::read(&path).unwrap();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    let bad = dir.path().join("bad.dgcn");
    std::fs::write(&bad, &flipped).unwrap();
    let flipped_rejected = load(&bad).is_err();
    std::fs::write(&bad, &bytes[..bytes.len() - 9]).unwrap();
    let truncated_rejected = load(&bad).is_err();
    verdict(
        identical && flipped_rejected && truncated_rejected,
        format!(
            "bit-identical on 125 probes: {identical}; flipped byte rejected: {flipped_rejected}; \
             truncated file rejected: {truncated_rejected}"
        ),
    )
}

/// ln Γ by the Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let t = x + 7.5;
    let s: f64 = C[0] + (1..9).map(|i| C[i] / (x + i as f64)).sum::<f64>();
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// Student-t quantile by Simpson integration of the density and bisection.
fn t_quantile_oracle(p: f64, nu: f64) -> f64 {
    let c = (ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0)).exp() / (nu * std::f64::consts::PI).sqrt();
    let pdf = |t: f64| c * (1.0 + t * t / nu).powf(-(nu + 1.0) / 2.0);
    let cdf = |t: f64| {
        let m = 20_000;
        let h = t / m as f64;
        let s: f64 = (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * pdf(i as f64 * h)
            })
            .sum();
        0.5 + s * h / 3.0
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while cdf(hi) < p {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c12_interval() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let set = KernelSet::default();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &n in &[2usize, 3, 5, 12, 30, 101] {
        for &alpha in &[0.01, 0.05, 0.1, 0.5] {
            let x = uniform_matrix(n, 2, &mut rng);
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let batch = GpBatch::new(x, y, HyperField::constant(n, &[1.5; 10], 0.05)).unwrap();
            let xs = uniform_matrix(6, 2, &mut rng);
            let opts = PredictOptions {
                alpha_level: alpha,
                include_noise: true,
                ..Default::default()
            };
            let p = predict(&batch, &xs, &HyperField::constant(6, &[1.5; 10], 0.05), &set, &opts).unwrap();
            let t = t_quantile_oracle(1.0 - alpha / 2.0, (n - 1) as f64);
            for j in 0..xs.rows() {
                let half = 0.5 * (p.ci_high[j] - p.ci_low[j]);
                let want = t * p.variance[j].sqrt() / (n as f64).sqrt();
                worst = worst.max((half - want).abs());
                cases += 1;
            }
        }
    }
    verdict(
        worst < 1e-6,
        format!("{cases} intervals over N in 2..101 and 4 alpha levels, max |half-width - oracle| = {worst:.2e} (tol 1e-6)"),
    )
}

type Criterion = (u8, &'static str, bool, fn() -> Verdict);

const CRITERIA: [Criterion; 12] = [
    (1, "stationary-oracle equivalence", true, c1_stationary_oracle),
    (2, "gradient fidelity", true, c2_gradient_fidelity),
    (3, "PSD robustness", true, c3_psd_robustness),
    (4, "kNN exactness", true, c4_knn_exactness),
    (5, "non-stationarity win", false, c5_nonstationarity),
    (6, "Boston housing, raw targets", false, c6_boston),
    (7, "UCI concrete", false, c7_concrete),
    (8, "CATS gap filling", false, c8_cats),
    (9, "timing shape", false, c9_timing),
    (10, "lag table conformance", true, c10_lag_table),
    (11, "persistence round-trip", true, c11_persistence),
    (12, "interval half-width", true, c12_interval),
];

fn main() {
    let wanted: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut hard_failures = Vec::new();
    let mut passed = 0;
    let mut ran = 0;
    for (id, name, hard, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        ran += 1;
        println!(
            "criterion {id:>2} {}: {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        if v.pass {
            passed += 1;
        } else if hard {
            hard_failures.push(id);
        }
    }
    println!("acceptance: {passed}/{ran} criteria passed");
    if !hard_failures.is_empty() {
        eprintln!("correctness criteria failed: {hard_failures:?}");
        std::process::exit(1);
    }
}
