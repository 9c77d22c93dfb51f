//! Training-time scaling on seeded synthetic data.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::write_text;
use crate::error::{DgcnError, Result};
use crate::linalg::Matrix;
use crate::trainer::{fit, Dataset, TrainConfig};

/// A fixed batch size, or the whole training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSize {
    Fixed(usize),
    Full,
}

impl BatchSize {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            BatchSize::Fixed(b) => b.min(n),
            BatchSize::Full => n,
        }
    }
}

impl std::str::FromStr for BatchSize {
    type Err = DgcnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "N" | "n" | "full" => Ok(BatchSize::Full),
            t => t
                .parse()
                .ok()
                .filter(|&b: &usize| b > 0)
                .map(BatchSize::Fixed)
                .ok_or_else(|| DgcnError::InvalidConfig(format!("bad batch size {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub sizes: Vec<usize>,
    pub batch_sizes: Vec<BatchSize>,
    pub epochs: usize,
    pub n_inputs: usize,
    /// Rows whose estimated working set exceeds this are skipped.
    pub memory_cap_bytes: u64,
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            sizes: vec![400, 800, 1600, 3200],
            batch_sizes: vec![BatchSize::Fixed(200), BatchSize::Full],
            epochs: 100,
            n_inputs: 5,
            memory_cap_bytes: 4 << 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub n_b: usize,
    pub epochs: usize,
    pub seconds: Option<f64>,
    pub sec_per_epoch: Option<f64>,
    /// "ok", or why the row was skipped.
    pub status: String,
}

/// Sum of sines over `n_inputs` uniform inputs on [0, 1].
pub fn synthetic_data(n: usize, n_inputs: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, n_inputs, |_, _| rng.random::<f64>());
    let y = (0..n)
        .map(|i| {
            x.row(i)
                .iter()
                .enumerate()
                .map(|(j, v)| ((j + 1) as f64 * 2.0 * v).sin())
                .sum()
        })
        .collect();
    Dataset::new(x, y)
}

/// Rough peak bytes of one batch step: the covariance, its factor, the
/// gradient matrix and one matrix per kernel.
pub fn batch_bytes(n_b: usize, n_kernels: usize) -> u64 {
    (n_b as u64).pow(2) * 8 * (n_kernels as u64 + 3)
}

/// Times `fit` for every (size, batch size) pair, serially, after one
/// untimed warm-up fit. Early stopping is disabled so every row runs the
/// same number of epochs.
pub fn timing_benchmark(cfg: &TimingConfig, base: &TrainConfig) -> Result<Vec<TimingRow>> {
    if cfg.epochs == 0 || cfg.n_inputs == 0 {
        return Err(DgcnError::InvalidConfig("epochs and n_inputs must be positive".into()));
    }
    let train_cfg = |n_b: usize| TrainConfig {
        batch_size: n_b,
        max_epochs: cfg.epochs,
        patience: cfg.epochs + 1,
        seed: cfg.seed,
        ..base.clone()
    };
    let warm = synthetic_data(64, cfg.n_inputs, cfg.seed)?;
    fit(
        &warm,
        &TrainConfig {
            max_epochs: 1,
            ..train_cfg(64)
        },
    )?;
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let data = synthetic_data(n, cfg.n_inputs, cfg.seed)?;
        for &b in &cfg.batch_sizes {
            let n_b = b.resolve(n);
            let needed = batch_bytes(n_b, base.kernels.len());
            if needed > cfg.memory_cap_bytes {
                rows.push(TimingRow {
                    n,
                    n_b,
                    epochs: cfg.epochs,
                    seconds: None,
                    sec_per_epoch: None,
                    status: DgcnError::MemoryCapExceeded {
                        needed,
                        cap: cfg.memory_cap_bytes,
                    }
                    .to_string(),
                });
                continue;
            }
            let t0 = Instant::now();
            let model = fit(&data, &train_cfg(n_b))?;
            let seconds = t0.elapsed().as_secs_f64();
            let epochs = model.log().epochs.len();
            rows.push(TimingRow {
                n,
                n_b,
                epochs,
                seconds: Some(seconds),
                sec_per_epoch: Some(seconds / epochs as f64),
                status: "ok".into(),
            });
        }
    }
    Ok(rows)
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let cell = |v: Option<f64>| v.map(|s| s.to_string()).unwrap_or_default();
    let mut s = String::from("N,N_b,seconds,sec_per_epoch,status\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            r.n_b,
            cell(r.seconds),
            cell(r.sec_per_epoch),
            r.status.replace(',', ";")
        ));
    }
    s
}

pub fn write_timing_csv(path: impl AsRef<Path>, rows: &[TimingRow]) -> Result<()> {
    write_text(path.as_ref(), &timing_csv(rows))
}
