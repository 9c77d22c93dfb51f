//! Training loop, online updates and neighbour-batched prediction.

mod data;
mod persist;

pub use data::{Dataset, Scaler, STD_FLOOR};
pub use persist::{load, save, FORMAT_VERSION, MAGIC};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DgcnError, Result};
use crate::gp::{nll_grad, GpBatch, HyperField, PredictOptions, Prediction, Posterior, SIGMA2_FLOOR};
use crate::hypernet::{optimizer_step, Mlp, NetSpec, OptimizerConfig, OptimizerState, RegularizerSpec};
use crate::kernels::KernelSet;
use crate::linalg::Matrix;
use crate::neighbors::{NeighborIndex, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kernels: KernelSet,
    pub theta_net: NetSpec,
    pub sigma_net: NetSpec,
    pub regularizer: RegularizerSpec,
    /// Optimizer of the length-scale network.
    pub optimizer: OptimizerConfig,
    /// Learning rate of the noise network; `None` shares `optimizer.learning_rate`.
    pub sigma_learning_rate: Option<f64>,
    pub batch_size: usize,
    /// Neighbours per test point; `None` reuses `batch_size`.
    pub predict_k: Option<usize>,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub patience: usize,
    pub seed: u64,
    pub standardize_y: bool,
    pub neighbor_strategy: Strategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kernels: KernelSet::default(),
            theta_net: NetSpec::theta_default(),
            sigma_net: NetSpec::sigma_default(),
            regularizer: RegularizerSpec::default(),
            optimizer: OptimizerConfig::default().with_learning_rate(1e-2),
            sigma_learning_rate: None,
            batch_size: 200,
            predict_k: None,
            max_epochs: 100,
            tolerance: 1e-4,
            patience: 10,
            seed: 0,
            standardize_y: true,
            neighbor_strategy: Strategy::BruteForce,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.theta_net.validate()?;
        self.sigma_net.validate()?;
        self.regularizer.validate()?;
        self.optimizer.validate()?;
        self.sigma_optimizer().validate()?;
        if self.batch_size == 0 {
            return Err(DgcnError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.predict_k == Some(0) {
            return Err(DgcnError::InvalidConfig("predict_k must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(DgcnError::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(DgcnError::InvalidConfig("tolerance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn sigma_optimizer(&self) -> OptimizerConfig {
        match self.sigma_learning_rate {
            Some(lr) => self.optimizer.with_learning_rate(lr),
            None => self.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum of batch NLLs divided by the number of training points.
    pub mean_nll: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterEvent {
    pub epoch: usize,
    pub batch: usize,
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub jitter_events: Vec<JitterEvent>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn final_nll(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_nll)
    }
}

/// Everything needed to predict: both networks, the standardized training
/// set with its neighbour index, the scaler and the configuration.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    config: TrainConfig,
    theta_net: Mlp,
    sigma_net: Mlp,
    scaler: Scaler,
    columns: Vec<String>,
    target: String,
    x: Matrix,
    y: Vec<f64>,
    index: NeighborIndex,
    log: TrainLog,
}

impl TrainedModel {
    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn theta_net(&self) -> &Mlp {
        &self.theta_net
    }

    pub fn sigma_net(&self) -> &Mlp {
        &self.sigma_net
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    /// Standardized training inputs.
    pub fn train_x(&self) -> &Matrix {
        &self.x
    }

    /// Standardized training targets.
    pub fn train_y(&self) -> &[f64] {
        &self.y
    }

    pub fn n_train(&self) -> usize {
        self.y.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.x.cols()
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn kernels(&self) -> &KernelSet {
        &self.config.kernels
    }

    /// Inference-mode hyperparameters at standardized inputs.
    pub fn hyper_field(&self, xs: &Matrix) -> Result<HyperField> {
        hyper_from_outputs(self.theta_net.predict(xs)?, &self.sigma_net.predict(xs)?)
    }

    /// The training set as one GP batch, in stored order.
    pub fn full_batch(&self) -> Result<GpBatch> {
        GpBatch::new(self.x.clone(), self.y.clone(), self.hyper_field(&self.x)?)
    }

    pub fn default_k(&self) -> usize {
        self.config.predict_k.unwrap_or(self.config.batch_size)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        config: TrainConfig,
        theta_net: Mlp,
        sigma_net: Mlp,
        scaler: Scaler,
        columns: Vec<String>,
        target: String,
        x: Matrix,
        y: Vec<f64>,
        log: TrainLog,
    ) -> Result<Self> {
        let index = NeighborIndex::build(x.clone(), config.neighbor_strategy)?;
        Ok(TrainedModel {
            config,
            theta_net,
            sigma_net,
            scaler,
            columns,
            target,
            x,
            y,
            index,
            log,
        })
    }
}

fn hyper_from_outputs(theta: Matrix, sigma_out: &Matrix) -> Result<HyperField> {
    let sigma2 = sigma_out.as_slice().iter().map(|s| s + SIGMA2_FLOOR).collect();
    HyperField::new(theta, sigma2)
}

/// Smallest final batch kept on its own; smaller remainders join the previous batch.
pub fn min_tail(n_inputs: usize) -> usize {
    8.max(n_inputs + 2)
}

/// A shuffled partition of `0..n` into consecutive batches of `batch_size`.
pub fn epoch_batches(n: usize, batch_size: usize, n_inputs: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < min_tail(n_inputs)) {
        let tail = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(tail);
        }
    }
    batches
}

/// Stops once the relative epoch-over-epoch improvement stays below
/// `tolerance` for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    tolerance: f64,
    patience: usize,
    previous: Option<f64>,
    stalled: usize,
}

impl EarlyStop {
    pub fn new(tolerance: f64, patience: usize) -> Self {
        EarlyStop {
            tolerance,
            patience: patience.max(1),
            previous: None,
            stalled: 0,
        }
    }

    /// Records an epoch value; true when training should stop.
    pub fn observe(&mut self, value: f64) -> bool {
        if let Some(prev) = self.previous {
            let improvement = (prev - value) / f64::abs(prev).max(f64::MIN_POSITIVE);
            if improvement < self.tolerance {
                self.stalled += 1;
            } else {
                self.stalled = 0;
            }
        }
        self.previous = Some(value);
        self.stalled >= self.patience
    }
}

struct Nets<'a> {
    theta: &'a mut Mlp,
    sigma: &'a mut Mlp,
}

/// Runs up to `epochs` epochs over (xs, ys), appending to `log`.
fn train_epochs(
    nets: Nets<'_>,
    xs: &Matrix,
    ys: &[f64],
    config: &TrainConfig,
    epochs: usize,
    rng: &mut ChaCha8Rng,
    log: &mut TrainLog,
) -> Result<()> {
    let theta_cfg = config.optimizer;
    let sigma_cfg = config.sigma_optimizer();
    let mut theta_state = OptimizerState::new(&nets.theta.params);
    let mut sigma_state = OptimizerState::new(&nets.sigma.params);
    let n = ys.len();
    let first_epoch = log.epochs.len();
    let mut stop = EarlyStop::new(config.tolerance, config.patience);
    for e in 0..epochs {
        let epoch = first_epoch + e;
        let batches = epoch_batches(n, config.batch_size, xs.cols(), rng);
        let mut total = 0.0;
        for (b, rows) in batches.iter().enumerate() {
            let fail = |source: DgcnError| DgcnError::BatchFailed {
                epoch,
                batch: b,
                rows: rows.clone(),
                source: Box::new(source),
            };
            let xb = xs.select_rows(rows);
            let yb: Vec<f64> = rows.iter().map(|&i| ys[i]).collect();
            let (theta, theta_tape) = nets.theta.forward_train(&xb, &config.regularizer, rng)?;
            let (sigma, sigma_tape) = nets.sigma.forward_train(&xb, &config.regularizer, rng)?;
            if !theta.is_finite() || !sigma.is_finite() {
                return Err(DgcnError::NonFiniteLoss { epoch, batch: b });
            }
            let batch = GpBatch::new(xb, yb, hyper_from_outputs(theta, &sigma)?)?;
            let grads = nll_grad(
                &batch,
                &config.kernels,
                nets.theta,
                &theta_tape,
                nets.sigma,
                &sigma_tape,
            )
            .map_err(fail)?;
            if !grads.hyper.nll.is_finite() || !grads.theta_net.is_finite() || !grads.sigma_net.is_finite() {
                return Err(DgcnError::NonFiniteLoss { epoch, batch: b });
            }
            if grads.hyper.jitter_used > 0.0 {
                log.jitter_events.push(JitterEvent {
                    epoch,
                    batch: b,
                    jitter: grads.hyper.jitter_used,
                });
            }
            total += grads.hyper.nll;
            optimizer_step(&mut theta_state, &mut nets.theta.params, &grads.theta_net, &theta_cfg)?;
            optimizer_step(&mut sigma_state, &mut nets.sigma.params, &grads.sigma_net, &sigma_cfg)?;
        }
        let mean_nll = total / n as f64;
        log.epochs.push(EpochRecord {
            epoch,
            mean_nll,
            batches: batches.len(),
        });
        if stop.observe(mean_nll) {
            log.stopped_early = true;
            break;
        }
    }
    Ok(())
}

/// Trains both hypernetworks on `data` from a seeded initialization.
pub fn fit(data: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let scaler = Scaler::fit(data, config.standardize_y);
    let xs = scaler.transform_x(&data.x)?;
    let ys = scaler.transform_y(&data.y);
    let nv = data.n_inputs();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta_net = Mlp::new(&config.theta_net, nv, nv * config.kernels.len(), &mut rng);
    let mut sigma_net = Mlp::new(&config.sigma_net, nv, 1, &mut rng);
    let mut log = TrainLog::default();
    train_epochs(
        Nets {
            theta: &mut theta_net,
            sigma: &mut sigma_net,
        },
        &xs,
        &ys,
        config,
        config.max_epochs,
        &mut rng,
        &mut log,
    )?;
    TrainedModel::from_parts(
        config.clone(),
        theta_net,
        sigma_net,
        scaler,
        data.columns.clone(),
        data.target.clone(),
        xs,
        ys,
        log,
    )
}

/// Appends `new_data` (standardized with the existing scaler) and continues
/// training from the current weights for up to `epochs` epochs with fresh
/// optimizer moments.
pub fn update(model: &TrainedModel, new_data: &Dataset, epochs: usize) -> Result<TrainedModel> {
    if new_data.n_inputs() != model.n_inputs() {
        return Err(DgcnError::SchemaMismatch {
            expected: model.n_inputs(),
            found: new_data.n_inputs(),
        });
    }
    let xs = model.x.vstack(&model.scaler.transform_x(&new_data.x)?)?;
    let mut ys = model.y.clone();
    ys.extend(model.scaler.transform_y(&new_data.y));
    let mut theta_net = model.theta_net.clone();
    let mut sigma_net = model.sigma_net.clone();
    let mut log = model.log.clone();
    log.stopped_early = false;
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    rng.set_stream(log.epochs.len() as u64 + 1);
    train_epochs(
        Nets {
            theta: &mut theta_net,
            sigma: &mut sigma_net,
        },
        &xs,
        &ys,
        &model.config,
        epochs,
        &mut rng,
        &mut log,
    )?;
    TrainedModel::from_parts(
        model.config.clone(),
        theta_net,
        sigma_net,
        model.scaler.clone(),
        model.columns.clone(),
        model.target.clone(),
        xs,
        ys,
        log,
    )
}

fn destandardize(model: &TrainedModel, p: &mut Prediction) {
    let s = &model.scaler;
    p.mean = s.inverse_y(&p.mean);
    p.variance = s.inverse_variance(&p.variance);
    p.ci_low = s.inverse_y(&p.ci_low);
    p.ci_high = s.inverse_y(&p.ci_high);
}

/// Predicts each raw test point from its `k` nearest training points
/// (`None`: the configured default). Test points that share a neighbour set
/// share one factorization. Neighbour sets are used in ascending index order,
/// so `k ≥ N` reproduces [`predict_full`] exactly.
pub fn predict_batched(
    model: &TrainedModel,
    xstar_raw: &Matrix,
    k: Option<usize>,
    opts: &PredictOptions,
) -> Result<Prediction> {
    if xstar_raw.cols() != model.n_inputs() {
        return Err(DgcnError::SchemaMismatch {
            expected: model.n_inputs(),
            found: xstar_raw.cols(),
        });
    }
    if xstar_raw.rows() == 0 {
        return Ok(Prediction::empty(opts.alpha_level));
    }
    let xs = model.scaler.transform_x(xstar_raw)?;
    let train = model.full_batch()?;
    let hyper_star = model.hyper_field(&xs)?;
    let k = k.unwrap_or_else(|| model.default_k());
    let mut out = knn_predict(&train, &model.index, &model.config.kernels, &xs, &hyper_star, k, opts)?;
    destandardize(model, &mut out);
    Ok(out)
}

/// Neighbour-batched GP prediction in standardized space. Test points are
/// grouped by their (index-sorted) neighbour sets and each group is solved
/// once; groups run in parallel.
pub fn knn_predict(
    train: &GpBatch,
    index: &NeighborIndex,
    kernels: &KernelSet,
    xs: &Matrix,
    hyper_star: &HyperField,
    k: usize,
    opts: &PredictOptions,
) -> Result<Prediction> {
    if !(opts.alpha_level > 0.0 && opts.alpha_level < 1.0) {
        return Err(DgcnError::InvalidAlpha(opts.alpha_level));
    }
    let m = xs.rows();
    if m == 0 {
        return Ok(Prediction::empty(opts.alpha_level));
    }
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for j in 0..m {
        let mut nb = index.query(xs.row(j), k.max(1));
        nb.sort_unstable();
        groups.entry(nb).or_default().push(j);
    }
    let groups: Vec<(Vec<usize>, Vec<usize>)> = groups.into_iter().collect();
    let parts: Vec<(Vec<usize>, Prediction)> = groups
        .par_iter()
        .map(|(nb, members)| {
            let batch = GpBatch::new(
                train.x.select_rows(nb),
                nb.iter().map(|&i| train.y[i]).collect(),
                train.hyper.select_rows(nb),
            )?;
            let post = Posterior::new(&batch, kernels)?;
            let p = post.predict(&xs.select_rows(members), &hyper_star.select_rows(members), opts)?;
            Ok((members.clone(), p))
        })
        .collect::<Result<_>>()?;

    let mut out = Prediction {
        mean: vec![0.0; m],
        variance: vec![0.0; m],
        ci_low: vec![0.0; m],
        ci_high: vec![0.0; m],
        alpha_level: opts.alpha_level,
        clamped: 0,
    };
    for (members, p) in parts {
        for (slot, &j) in members.iter().enumerate() {
            out.mean[j] = p.mean[slot];
            out.variance[j] = p.variance[slot];
            out.ci_low[j] = p.ci_low[slot];
            out.ci_high[j] = p.ci_high[slot];
        }
        out.clamped += p.clamped;
    }
    Ok(out)
}

/// Inference-mode NLL per training point, summed over consecutive batches
/// of the configured size in stored order.
pub fn training_nll(model: &TrainedModel) -> Result<f64> {
    let hyper = model.hyper_field(&model.x)?;
    let n = model.n_train();
    let order: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for rows in order.chunks(model.config.batch_size.max(1)) {
        let batch = GpBatch::new(
            model.x.select_rows(rows),
            rows.iter().map(|&i| model.y[i]).collect(),
            hyper.select_rows(rows),
        )?;
        total += crate::gp::nll(&batch, &model.config.kernels)?;
    }
    Ok(total / n as f64)
}

/// Prediction conditioned on the whole training set.
pub fn predict_full(model: &TrainedModel, xstar_raw: &Matrix, opts: &PredictOptions) -> Result<Prediction> {
    if xstar_raw.rows() == 0 {
        return Ok(Prediction::empty(opts.alpha_level));
    }
    let xs = model.scaler.transform_x(xstar_raw)?;
    let hyper_star = model.hyper_field(&xs)?;
    let batch = model.full_batch()?;
    let mut p = crate::gp::predict(&batch, &xs, &hyper_star, &model.config.kernels, opts)?;
    destandardize(model, &mut p);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sin_data(n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n)
            .map(|i| i as f64 * 2.0 * std::f64::consts::PI / (n - 1) as f64)
            .collect();
        let y = xs.iter().map(|x| (3.0 * x).sin()).collect();
        Dataset::new(Matrix::column(&xs), y).unwrap()
    }

    fn quick(epochs: usize, batch: usize) -> TrainConfig {
        TrainConfig {
            max_epochs: epochs,
            batch_size: batch,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn partition_covers_every_index_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, b) in [(100, 30), (101, 50), (7, 200), (64, 8), (203, 200)] {
            let batches = epoch_batches(n, b, 3, &mut rng);
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(batches.len() == 1 || batches.iter().all(|bt| bt.len() >= min_tail(3)));
        }
        // 100 = 30+30+30+10 keeps the tail, 203 merges 3 into the 200 batch
        assert_eq!(epoch_batches(100, 30, 1, &mut rng).len(), 4);
        assert_eq!(epoch_batches(203, 200, 1, &mut rng).len(), 1);
    }

    #[test]
    fn early_stop_counts_consecutive_stalls() {
        let mut s = EarlyStop::new(0.01, 2);
        assert!(!s.observe(10.0));
        assert!(!s.observe(9.0));
        assert!(!s.observe(8.99));
        assert!(!s.observe(8.0));
        assert!(!s.observe(8.5));
        assert!(s.observe(8.49));
        // negative values use |previous| as the scale
        let mut n = EarlyStop::new(0.01, 1);
        assert!(!n.observe(-1.0));
        assert!(!n.observe(-1.5));
        assert!(n.observe(-1.501));
    }

    #[test]
    fn full_batch_is_one_step_per_epoch() {
        let m = fit(&sin_data(20), &TrainConfig { patience: 100, ..quick(3, 20) }).unwrap();
        assert_eq!(m.log().epochs.len(), 3);
        assert!(m.log().epochs.iter().all(|e| e.batches == 1));
    }

    #[test]
    fn config_validation() {
        assert!(fit(&sin_data(10), &quick(0, 10)).is_err());
        assert!(fit(&sin_data(10), &quick(5, 0)).is_err());
        let bad: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"max_epoch": 3}"#);
        assert!(bad.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"max_epochs": 3}"#).unwrap();
        assert_eq!(ok.max_epochs, 3);
        assert_eq!(ok.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn deterministic_under_seed() {
        let d = sin_data(24);
        let a = fit(&d, &quick(4, 10)).unwrap();
        let b = fit(&d, &quick(4, 10)).unwrap();
        assert_eq!(a.theta_net(), b.theta_net());
        assert_eq!(a.sigma_net(), b.sigma_net());
        assert_eq!(a.log(), b.log());
        let c = fit(&d, &TrainConfig { seed: 1, ..quick(4, 10) }).unwrap();
        assert_ne!(a.theta_net(), c.theta_net());
    }

    #[test]
    fn zero_epoch_update_keeps_weights() {
        let d = sin_data(20);
        let m = fit(&d, &quick(2, 20)).unwrap();
        let extra = Dataset::new(Matrix::column(&[0.1, 0.2]), vec![0.3, 0.5]).unwrap();
        let u = update(&m, &extra, 0).unwrap();
        assert_eq!(u.theta_net(), m.theta_net());
        assert_eq!(u.n_train(), 22);
        assert_eq!(u.index().len(), 22);
        let wide = Dataset::new(Matrix::zeros(2, 2), vec![0.0, 1.0]).unwrap();
        assert!(matches!(update(&m, &wide, 1), Err(DgcnError::SchemaMismatch { .. })));
    }

    #[test]
    fn batched_with_all_neighbours_is_exact() {
        let d = sin_data(25);
        let m = fit(&d, &quick(3, 10)).unwrap();
        let probe = Matrix::column(&[0.05, 1.3, 2.2, 4.0, 6.5, 1.3]);
        let opts = PredictOptions::default();
        let full = predict_full(&m, &probe, &opts).unwrap();
        let batched = predict_batched(&m, &probe, Some(25), &opts).unwrap();
        assert_eq!(full, batched);
        let empty = predict_batched(&m, &Matrix::zeros(0, 1), None, &opts).unwrap();
        assert!(empty.is_empty());
        assert!(matches!(
            predict_batched(&m, &Matrix::zeros(1, 2), None, &opts),
            Err(DgcnError::SchemaMismatch { .. })
        ));
    }
}
