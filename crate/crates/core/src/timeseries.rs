//! Lag embedding, recursive and direct multi-step forecasting, and the
//! five-block gap-filling protocol with its E1 score.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DgcnError, Result};
use crate::gp::{PredictOptions, Prediction};
use crate::linalg::Matrix;
use crate::trainer::{fit, predict_batched, training_nll, Dataset, TrainConfig, TrainedModel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LagSpec {
    pub n_lags: usize,
    /// Future offsets to predict; 0 is the value at t itself.
    pub horizons: Vec<usize>,
}

impl Default for LagSpec {
    fn default() -> Self {
        LagSpec {
            n_lags: 20,
            horizons: vec![0],
        }
    }
}

impl LagSpec {
    pub fn new(n_lags: usize) -> Self {
        LagSpec {
            n_lags,
            horizons: vec![0],
        }
    }

    pub fn with_horizons(n_lags: usize, horizons: Vec<usize>) -> Self {
        LagSpec { n_lags, horizons }
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lags == 0 {
            return Err(DgcnError::InvalidConfig("n_lags must be at least 1".into()));
        }
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DgcnError::InvalidConfig(
                "horizons must be non-empty and strictly ascending".into(),
            ));
        }
        Ok(())
    }
}

/// Supervised rows cut from a series.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedData {
    /// Lagged inputs, oldest first within each channel.
    pub x: Matrix,
    /// One column per horizon.
    pub targets: Matrix,
    pub horizons: Vec<usize>,
    /// 0-based position t of each row.
    pub times: Vec<usize>,
    /// Lags per input channel.
    pub n_lags: usize,
}

impl LaggedData {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The rows paired with the target at horizon position `h`.
    pub fn dataset(&self, h: usize) -> Result<Dataset> {
        let n_lags = self.n_lags;
        let columns = (0..self.x.cols())
            .map(|j| format!("c{}_lag{}", j / n_lags, n_lags - j % n_lags))
            .collect();
        Dataset::with_names(
            self.x.clone(),
            self.targets.col_vec(h),
            columns,
            format!("h{}", self.horizons[h]),
        )
    }
}

/// Lag embedding of a single series: inputs (y_{t−N_t}, …, y_{t−1}), outputs
/// y_{t+h}. Rows that reach outside the series, or touch a missing (NaN)
/// value, are dropped.
pub fn lag_embed(series: &[f64], spec: &LagSpec) -> Result<LaggedData> {
    lag_embed_channels(&[series], series, spec)
}

/// General form: lags of every input channel (the target series may be one
/// of them) against future values of `target`.
pub fn lag_embed_channels(channels: &[&[f64]], target: &[f64], spec: &LagSpec) -> Result<LaggedData> {
    spec.validate()?;
    if channels.is_empty() || channels.iter().any(|c| c.len() != target.len()) {
        return Err(DgcnError::ShapeMismatch(
            "every channel must have the target's length".into(),
        ));
    }
    let n = target.len();
    let (nt, hmax) = (spec.n_lags, spec.max_horizon());
    if n <= nt + hmax {
        return Err(DgcnError::SeriesTooShort {
            needed: nt + hmax,
            got: n,
        });
    }
    let width = nt * channels.len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut times = Vec::new();
    for t in nt..n - hmax {
        let inputs = channels.iter().flat_map(|c| c[t - nt..t].iter().copied());
        let outputs = spec.horizons.iter().map(|&h| target[t + h]);
        if inputs.clone().chain(outputs.clone()).any(|v| !v.is_finite()) {
            continue;
        }
        x.extend(inputs);
        y.extend(outputs);
        times.push(t);
    }
    let rows = times.len();
    Ok(LaggedData {
        x: Matrix::from_vec(rows, width, x)?,
        targets: Matrix::from_vec(rows, spec.horizons.len(), y)?,
        horizons: spec.horizons.clone(),
        times,
        n_lags: nt,
    })
}

fn history_tail(history: &[f64], n_lags: usize) -> Result<Vec<f64>> {
    if history.len() < n_lags {
        return Err(DgcnError::SeriesTooShort {
            needed: n_lags,
            got: history.len(),
        });
    }
    let tail = history[history.len() - n_lags..].to_vec();
    if tail.iter().any(|v| !v.is_finite()) {
        return Err(DgcnError::InvalidDataset(
            "forecast history ends with missing values".into(),
        ));
    }
    Ok(tail)
}

/// Recursive single-step forecast: each predicted mean becomes the newest lag.
pub fn forecast_recursive(
    model: &TrainedModel,
    history: &[f64],
    steps: usize,
    k: Option<usize>,
    opts: &PredictOptions,
) -> Result<Prediction> {
    let n_lags = model.n_inputs();
    let mut window = history_tail(history, n_lags)?;
    let mut out = Prediction::empty(opts.alpha_level);
    for _ in 0..steps {
        let p = predict_batched(model, &Matrix::from_vec(1, n_lags, window.clone())?, k, opts)?;
        out.mean.push(p.mean[0]);
        out.variance.push(p.variance[0]);
        out.ci_low.push(p.ci_low[0]);
        out.ci_high.push(p.ci_high[0]);
        out.clamped += p.clamped;
        window.remove(0);
        window.push(p.mean[0]);
    }
    Ok(out)
}

/// One model per horizon, each fed the same lag window.
#[derive(Debug, Clone)]
pub struct DirectForecaster {
    pub horizons: Vec<usize>,
    pub models: Vec<TrainedModel>,
}

pub fn fit_direct(series: &[f64], spec: &LagSpec, config: &TrainConfig) -> Result<DirectForecaster> {
    let lagged = lag_embed(series, spec)?;
    let models = (0..spec.horizons.len())
        .map(|h| fit(&lagged.dataset(h)?, config))
        .collect::<Result<_>>()?;
    Ok(DirectForecaster {
        horizons: spec.horizons.clone(),
        models,
    })
}

impl DirectForecaster {
    /// Predictions at `len(history) + h` for every horizon h, from the last lags.
    pub fn forecast(&self, history: &[f64], k: Option<usize>, opts: &PredictOptions) -> Result<Prediction> {
        let mut out = Prediction::empty(opts.alpha_level);
        for model in &self.models {
            let window = history_tail(history, model.n_inputs())?;
            let p = predict_batched(model, &Matrix::from_vec(1, window.len(), window)?, k, opts)?;
            out.mean.push(p.mean[0]);
            out.variance.push(p.variance[0]);
            out.ci_low.push(p.ci_low[0]);
            out.ci_high.push(p.ci_high[0]);
            out.clamped += p.clamped;
        }
        Ok(out)
    }
}

/// Inclusive 1-based ranges of missing values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub ranges: Vec<(usize, usize)>,
}

pub const CATS_BLOCKS: [(usize, usize); 5] = [
    (981, 1000),
    (1981, 2000),
    (2981, 3000),
    (3981, 4000),
    (4981, 5000),
];

pub const CATS_LEN: usize = 5000;

impl BlockSpec {
    pub fn new(ranges: Vec<(usize, usize)>) -> Result<Self> {
        let ok = ranges.iter().all(|&(a, b)| a >= 1 && a <= b)
            && ranges.windows(2).all(|w| w[0].1 < w[1].0);
        if !ok {
            return Err(DgcnError::InvalidConfig(
                "blocks must be 1-based, non-empty, disjoint and ascending".into(),
            ));
        }
        Ok(BlockSpec { ranges })
    }

    pub fn cats() -> Self {
        BlockSpec {
            ranges: CATS_BLOCKS.to_vec(),
        }
    }

    pub fn total_len(&self) -> usize {
        self.ranges.iter().map(|(a, b)| b - a + 1).sum()
    }
}

/// E1: total squared error over the 100 missing values divided by 100.
pub fn e1_score(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != 100 || pred.len() != 100 {
        return Err(DgcnError::ShapeMismatch(format!(
            "E1 needs 5 × 20 values, got {} truth and {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    Ok(block_scores(truth, pred, 20).iter().sum())
}

/// Per-block squared-error sums divided by the total count.
pub fn block_scores(truth: &[f64], pred: &[f64], block_len: usize) -> Vec<f64> {
    let total = truth.len() as f64;
    truth
        .chunks(block_len)
        .zip(pred.chunks(block_len))
        .map(|(t, p)| t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / total)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    #[default]
    Recursive,
    /// One model per step ahead.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockForecast {
    pub range: (usize, usize),
    pub n_lags: usize,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    pub blocks: Vec<BlockForecast>,
    /// Stitched means in block order.
    pub predictions: Vec<f64>,
    /// Per-block contributions and E1, when truth was supplied.
    pub block_scores: Option<Vec<f64>>,
    pub e1: Option<f64>,
}

/// Trains on everything strictly before the block (`prefix`) and forecasts
/// the block's values.
pub fn forecast_block(
    prefix: &[f64],
    len: usize,
    spec: &LagSpec,
    config: &TrainConfig,
    mode: ForecastMode,
    opts: &PredictOptions,
) -> Result<Prediction> {
    match mode {
        ForecastMode::Recursive => {
            let lagged = lag_embed(prefix, &LagSpec::new(spec.n_lags))?;
            let model = fit(&lagged.dataset(0)?, config)?;
            forecast_recursive(&model, prefix, len, None, opts)
        }
        ForecastMode::Direct => {
            let direct = LagSpec::with_horizons(spec.n_lags, (0..len).collect());
            fit_direct(prefix, &direct, config)?.forecast(prefix, None, opts)
        }
    }
}

/// Fills every block of `series` (missing values may be NaN) with one model
/// per block, trained only on values before that block's start.
pub fn gap_protocol(
    series: &[f64],
    blocks: &BlockSpec,
    lags: &[LagSpec],
    config: &TrainConfig,
    mode: ForecastMode,
    truth: Option<&[f64]>,
) -> Result<GapResult> {
    if lags.len() != blocks.ranges.len() {
        return Err(DgcnError::InvalidConfig(format!(
            "{} lag specs for {} blocks",
            lags.len(),
            blocks.ranges.len()
        )));
    }
    if let Some(&(_, end)) = blocks.ranges.last() {
        if end > series.len() {
            return Err(DgcnError::SeriesTooShort {
                needed: end,
                got: series.len(),
            });
        }
    }
    let opts = PredictOptions::default();
    let mut out = Vec::with_capacity(lags.len());
    for (b, (&(start, end), spec)) in blocks.ranges.iter().zip(lags).enumerate() {
        let block_config = TrainConfig {
            seed: config.seed.wrapping_add(b as u64),
            ..config.clone()
        };
        let prediction = forecast_block(&series[..start - 1], end - start + 1, spec, &block_config, mode, &opts)?;
        out.push(BlockForecast {
            range: (start, end),
            n_lags: spec.n_lags,
            prediction,
        });
    }
    let predictions: Vec<f64> = out.iter().flat_map(|b| b.prediction.mean.iter().copied()).collect();
    let (block_scores, e1) = match truth {
        Some(t) => {
            if t.len() != predictions.len() {
                return Err(DgcnError::ShapeMismatch(format!(
                    "{} truth values for {} missing values",
                    t.len(),
                    predictions.len()
                )));
            }
            let sizes: Vec<usize> = blocks.ranges.iter().map(|(a, b)| b - a + 1).collect();
            let total = t.len() as f64;
            let mut scores = Vec::with_capacity(sizes.len());
            let mut at = 0;
            for s in sizes {
                let sse: f64 = (at..at + s).map(|i| (t[i] - predictions[i]).powi(2)).sum();
                scores.push(sse / total);
                at += s;
            }
            let e1 = scores.iter().sum();
            (Some(scores), Some(e1))
        }
        None => (None, None),
    };
    Ok(GapResult {
        blocks: out,
        predictions,
        block_scores,
        e1,
    })
}

/// The five-block protocol on a 5000-point series.
pub fn cats_protocol(
    series: &[f64],
    lags: &[LagSpec],
    config: &TrainConfig,
    mode: ForecastMode,
    truth: Option<&[f64]>,
) -> Result<GapResult> {
    if series.len() != CATS_LEN {
        return Err(DgcnError::ShapeMismatch(format!(
            "expected {CATS_LEN} values, got {}",
            series.len()
        )));
    }
    gap_protocol(series, &BlockSpec::cats(), lags, config, mode, truth)
}

pub const LAG_CANDIDATES: [usize; 5] = [5, 10, 20, 40, 80];

/// Picks the lag count whose trained model has the lowest per-point training
/// NLL. Returns the choice and every (lags, NLL) pair tried; candidates that
/// leave too few rows are skipped.
pub fn lag_search(series: &[f64], candidates: &[usize], config: &TrainConfig) -> Result<(usize, Vec<(usize, f64)>)> {
    let mut tried = Vec::new();
    for &n_lags in candidates {
        let lagged = match lag_embed(series, &LagSpec::new(n_lags)) {
            Ok(l) if l.len() >= 2 => l,
            Ok(_) | Err(DgcnError::SeriesTooShort { .. }) => continue,
            Err(e) => return Err(e),
        };
        let model = fit(&lagged.dataset(0)?, config)?;
        tried.push((n_lags, training_nll(&model)?));
    }
    let best = tried
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|&(n, _)| n)
        .ok_or(DgcnError::SeriesTooShort {
            needed: candidates.iter().copied().min().unwrap_or(0) + 2,
            got: series.len(),
        })?;
    Ok((best, tried))
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("nan") || c.eq_ignore_ascii_case("na")
}

/// Single-column series; an optional non-numeric first line is a header.
/// Empty lines, "NaN" and "NA" are missing values.
pub fn read_series(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DgcnError::io(path, e))?;
    parse_series(&text)
}

pub fn parse_series(text: &str) -> Result<Vec<f64>> {
    // `lines` already absorbs the final newline, so a trailing blank line is
    // a missing value (a series may end inside a gap)
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (row, line) in lines.iter().enumerate() {
        let cell = line.trim().trim_matches('"');
        if cell.contains(',') {
            return Err(DgcnError::Parse {
                row: row + 1,
                col: 2,
                msg: "series files have a single column".into(),
            });
        }
        if is_missing(cell) {
            out.push(f64::NAN);
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if row == 0 => {}
            Err(e) => {
                return Err(DgcnError::Parse {
                    row: row + 1,
                    col: 1,
                    msg: format!("{cell:?}: {e}"),
                })
            }
        }
    }
    Ok(out)
}

/// Columns index, prediction, variance, ci_low, ci_high; `indices` label the rows.
pub fn write_forecast_csv(path: impl AsRef<Path>, indices: &[usize], p: &Prediction) -> Result<()> {
    let path = path.as_ref();
    let io = |e: std::io::Error| DgcnError::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "index,prediction,variance,ci_low,ci_high").map_err(io)?;
    for (i, &idx) in indices.iter().enumerate() {
        writeln!(
            w,
            "{idx},{},{},{},{}",
            p.mean[i], p.variance[i], p.ci_low[i], p.ci_high[i]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
