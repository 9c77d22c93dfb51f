use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stationary::fit_stationary;
use crate::error::{DgcnError, Result};
use crate::gp::PredictOptions;
use crate::trainer::{fit, predict_batched, Dataset, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    #[default]
    KFoldRepeated,
    /// First `train_size` rows train, the last `test_size` rows test.
    FixedSplitRepeated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    #[default]
    None,
    Log,
    /// Zero mean, unit variance over the whole dataset.
    Standardize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Rmse,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Dgcn,
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub kind: ProtocolKind,
    pub folds: usize,
    pub repeats: usize,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    pub transform: TargetTransform,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            kind: ProtocolKind::KFoldRepeated,
            folds: 10,
            repeats: 20,
            train_size: None,
            test_size: None,
            transform: TargetTransform::None,
            metric: Metric::Rmse,
            seed: 0,
        }
    }
}

pub const PRESETS: [&str; 5] = [
    "table3-log",
    "table3-normalized-split",
    "table3-normalized-cv",
    "table3-raw",
    "table4",
];

impl Protocol {
    /// Named settings of the published comparisons: log-target 20×10-fold,
    /// normalized 455/51 split ×25, normalized 20×10-fold, raw 20×10-fold.
    pub fn preset(name: &str) -> Result<Self> {
        let cv = Protocol::default();
        Ok(match name {
            "table3-log" => Protocol {
                transform: TargetTransform::Log,
                ..cv
            },
            "table3-normalized-split" => Protocol {
                kind: ProtocolKind::FixedSplitRepeated,
                repeats: 25,
                train_size: Some(455),
                test_size: Some(51),
                transform: TargetTransform::Standardize,
                ..cv
            },
            "table3-normalized-cv" => Protocol {
                transform: TargetTransform::Standardize,
                ..cv
            },
            "table3-raw" | "table4" => cv,
            other => {
                return Err(DgcnError::InvalidConfig(format!(
                    "unknown preset {other:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.repeats == 0 {
            return Err(DgcnError::InvalidConfig("repeats must be at least 1".into()));
        }
        match self.kind {
            ProtocolKind::KFoldRepeated => {
                if self.folds < 2 || self.folds > n {
                    return Err(DgcnError::InvalidConfig(format!(
                        "folds must lie in [2, {n}], got {}",
                        self.folds
                    )));
                }
            }
            ProtocolKind::FixedSplitRepeated => {
                let (tr, te) = self.split_sizes(n);
                if tr < 2 || te == 0 || tr + te > n {
                    return Err(DgcnError::InvalidConfig(format!(
                        "split {tr}/{te} does not fit {n} rows"
                    )));
                }
            }
        }
        Ok(())
    }

    fn split_sizes(&self, n: usize) -> (usize, usize) {
        match (self.train_size, self.test_size) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, n.saturating_sub(a)),
            (None, Some(b)) => (n.saturating_sub(b), b),
            (None, None) => (n - n / 10, n / 10),
        }
    }
}

/// Fold sizes: the first N mod folds folds get one extra row.
pub fn fold_sizes(n: usize, folds: usize) -> Vec<usize> {
    (0..folds).map(|f| n / folds + usize::from(f < n % folds)).collect()
}

/// Shuffle of `0..n` for repeat `r`; depends only on (`seed`, `r`).
pub fn repeat_order(n: usize, seed: u64, repeat: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Contiguous folds over the repeat's shuffled order.
pub fn fold_partition(n: usize, folds: usize, seed: u64, repeat: usize) -> Vec<Vec<usize>> {
    let order = repeat_order(n, seed, repeat);
    let mut at = 0;
    fold_sizes(n, folds)
        .into_iter()
        .map(|s| {
            let f = order[at..at + s].to_vec();
            at += s;
            f
        })
        .collect()
}

pub fn apply_transform(y: &[f64], transform: TargetTransform) -> Result<Vec<f64>> {
    match transform {
        TargetTransform::None => Ok(y.to_vec()),
        TargetTransform::Log => {
            if y.iter().any(|&v| v <= 0.0) {
                return Err(DgcnError::InvalidDataset("log transform needs positive targets".into()));
            }
            Ok(y.iter().map(|v| v.ln()).collect())
        }
        TargetTransform::Standardize => {
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
            Ok(y.iter().map(|v| (v - mean) / std).collect())
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Training seed of one (repeat, fold) run.
pub fn run_seed(config_seed: u64, protocol_seed: u64, repeat: usize, fold: usize) -> u64 {
    splitmix(config_seed ^ splitmix(protocol_seed ^ splitmix(((repeat as u64) << 32) | fold as u64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub repeat: usize,
    pub fold: usize,
    pub metric_value: f64,
    pub rmse: f64,
    pub mse: f64,
    pub n_test: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: ModelKind,
    pub metric: Metric,
    pub n_runs: usize,
    /// Statistics over repeats; each repeat's value pools the squared errors
    /// of all its held-out points.
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub std: f64,
    /// Mean of the per-run values.
    pub run_mean: f64,
    pub config_fingerprint: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: Vec<RunRecord>,
    pub repeat_values: Vec<f64>,
    pub summary: Summary,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("run_id,repeat,fold,metric_value,seconds\n");
        for r in &self.runs {
            s.push_str(&format!("{},{},{},{},{}\n", r.run_id, r.repeat, r.fold, r.metric_value, r.seconds));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv())
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary).map_err(|e| DgcnError::InvalidFormat(e.to_string()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &(self.summary_json()? + "\n"))
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| DgcnError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| DgcnError::io(path, e))
}

/// Short stable hash of the model kind, protocol and training configuration.
pub fn config_fingerprint(kind: ModelKind, protocol: &Protocol, config: &TrainConfig) -> Result<String> {
    let json = serde_json::to_string(&(kind, protocol, config)).map_err(|e| DgcnError::InvalidFormat(e.to_string()))?;
    Ok(format!("{:08x}", crc32fast::hash(json.as_bytes())))
}

fn metric_of(metric: Metric, mse: f64) -> f64 {
    match metric {
        Metric::Rmse => mse.sqrt(),
        Metric::Mse => mse,
    }
}

struct Split {
    repeat: usize,
    fold: usize,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn splits(n: usize, p: &Protocol) -> Vec<Split> {
    match p.kind {
        ProtocolKind::KFoldRepeated => (0..p.repeats)
            .flat_map(|r| {
                let folds = fold_partition(n, p.folds, p.seed, r);
                (0..p.folds)
                    .map(|f| Split {
                        repeat: r,
                        fold: f,
                        train: folds
                            .iter()
                            .enumerate()
                            .filter(|&(g, _)| g != f)
                            .flat_map(|(_, v)| v.iter().copied())
                            .collect(),
                        test: folds[f].clone(),
                    })
                    .collect::<Vec<_>>()
            })
            .collect(),
        ProtocolKind::FixedSplitRepeated => {
            let (tr, te) = p.split_sizes(n);
            (0..p.repeats)
                .map(|r| Split {
                    repeat: r,
                    fold: 0,
                    train: (0..tr).collect(),
                    test: (n - te..n).collect(),
                })
                .collect()
        }
    }
}

/// Squared errors of one train/test split.
fn run_split(data: &Dataset, split: &Split, config: &TrainConfig, kind: ModelKind) -> Result<Vec<f64>> {
    let train = data.subset(&split.train);
    let test = data.subset(&split.test);
    let opts = PredictOptions::default();
    let mean = match kind {
        ModelKind::Dgcn => predict_batched(&fit(&train, config)?, &test.x, None, &opts)?.mean,
        ModelKind::Stationary => fit_stationary(&train, config)?.predict(&test.x, None, &opts)?.mean,
    };
    Ok(mean.iter().zip(&test.y).map(|(m, y)| (m - y) * (m - y)).collect())
}

/// Runs every (repeat, fold) of the protocol. `progress` sees each finished run.
pub fn run_protocol_with(
    data: &Dataset,
    protocol: &Protocol,
    config: &TrainConfig,
    kind: ModelKind,
    progress: Option<&(dyn Fn(&RunRecord) + Sync)>,
) -> Result<BenchReport> {
    let n = data.len();
    protocol.validate(n)?;
    let y = apply_transform(&data.y, protocol.transform)?;
    let data = Dataset::with_names(data.x.clone(), y, data.columns.clone(), data.target.clone())?;
    let started = Instant::now();
    let splits = splits(n, protocol);
    let results: Vec<(RunRecord, Vec<f64>)> = splits
        .par_iter()
        .enumerate()
        .map(|(run_id, s)| {
            let t0 = Instant::now();
            let cfg = TrainConfig {
                seed: run_seed(config.seed, protocol.seed, s.repeat, s.fold),
                ..config.clone()
            };
            let sq = run_split(&data, s, &cfg, kind)?;
            let mse = sq.iter().sum::<f64>() / sq.len() as f64;
            let record = RunRecord {
                run_id,
                repeat: s.repeat,
                fold: s.fold,
                metric_value: metric_of(protocol.metric, mse),
                rmse: mse.sqrt(),
                mse,
                n_test: sq.len(),
                seconds: t0.elapsed().as_secs_f64(),
            };
            if let Some(cb) = progress {
                cb(&record);
            }
            Ok((record, sq))
        })
        .collect::<Result<_>>()?;

    let mut sse = vec![0.0; protocol.repeats];
    let mut count = vec![0usize; protocol.repeats];
    for (r, sq) in &results {
        sse[r.repeat] += sq.iter().sum::<f64>();
        count[r.repeat] += sq.len();
    }
    let repeat_values: Vec<f64> = sse
        .iter()
        .zip(&count)
        .map(|(s, &c)| metric_of(protocol.metric, s / c as f64))
        .collect();
    let runs: Vec<RunRecord> = results.into_iter().map(|(r, _)| r).collect();
    let k = repeat_values.len() as f64;
    let mean = repeat_values.iter().sum::<f64>() / k;
    let std = if repeat_values.len() > 1 {
        (repeat_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let summary = Summary {
        model: kind,
        metric: protocol.metric,
        n_runs: runs.len(),
        min: repeat_values.iter().copied().fold(f64::INFINITY, f64::min),
        mean,
        max: repeat_values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        std,
        run_mean: runs.iter().map(|r| r.metric_value).sum::<f64>() / runs.len() as f64,
        config_fingerprint: config_fingerprint(kind, protocol, config)?,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok(BenchReport {
        runs,
        repeat_values,
        summary,
    })
}

pub fn run_protocol(data: &Dataset, protocol: &Protocol, config: &TrainConfig) -> Result<BenchReport> {
    run_protocol_with(data, protocol, config, ModelKind::Dgcn, None)
}

pub fn stationary_baseline(data: &Dataset, protocol: &Protocol, config: &TrainConfig) -> Result<BenchReport> {
    run_protocol_with(data, protocol, config, ModelKind::Stationary, None)
}
