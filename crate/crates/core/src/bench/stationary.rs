//! Stationary squared-exponential GP: one θ vector and one σ² shared by all
//! points, trained with the same batches, optimizer and stopping rule as the
//! hypernetwork model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DgcnError, Result};
use crate::gp::{nll_hyper_grad, GpBatch, HyperField, PredictOptions, Prediction, SIGMA2_FLOOR};
use crate::hypernet::{optimizer_step, sigmoid, softplus, softplus_inverse, MlpGrads, MlpParams, OptimizerState};
use crate::kernels::{KernelId, KernelSet};
use crate::linalg::Matrix;
use crate::neighbors::NeighborIndex;
use crate::trainer::{epoch_batches, knn_predict, Dataset, EarlyStop, EpochRecord, Scaler, TrainConfig, TrainLog};

const INITIAL_THETA: f64 = 1.0;
const INITIAL_SIGMA2: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct StationaryModel {
    theta: Vec<f64>,
    sigma2: f64,
    scaler: Scaler,
    x: Matrix,
    y: Vec<f64>,
    index: NeighborIndex,
    k: usize,
    kernels: KernelSet,
    log: TrainLog,
}

/// Parameters are stored as a one-layer "network": the θ row as weights and
/// the softplus pre-image of σ² as the bias, so the shared optimizer applies.
fn to_params(theta: &[f64], rho: f64) -> MlpParams {
    MlpParams::from_parts(vec![Matrix::from_fn(1, theta.len(), |_, j| theta[j])], vec![vec![rho]])
}

fn sigma2_of(rho: f64) -> f64 {
    softplus(rho) + SIGMA2_FLOOR
}

pub fn fit_stationary(data: &Dataset, config: &TrainConfig) -> Result<StationaryModel> {
    config.validate()?;
    let scaler = Scaler::fit(data, config.standardize_y);
    let xs = scaler.transform_x(&data.x)?;
    let ys = scaler.transform_y(&data.y);
    let nv = data.n_inputs();
    let kernels = KernelSet::single(KernelId::SquaredExp);
    let mut params = to_params(&vec![INITIAL_THETA; nv], softplus_inverse(INITIAL_SIGMA2));
    let mut state = OptimizerState::new(&params);
    let opt = config.optimizer;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainLog::default();
    let mut stop = EarlyStop::new(config.tolerance, config.patience);
    for epoch in 0..config.max_epochs {
        let batches = epoch_batches(ys.len(), config.batch_size, nv, &mut rng);
        let mut total = 0.0;
        for (b, rows) in batches.iter().enumerate() {
            let theta = params.weights[0].row(0).to_vec();
            let rho = params.biases[0][0];
            let batch = GpBatch::new(
                xs.select_rows(rows),
                rows.iter().map(|&i| ys[i]).collect(),
                HyperField::constant(rows.len(), &theta, sigma2_of(rho)),
            )?;
            let g = nll_hyper_grad(&batch, &kernels).map_err(|e| DgcnError::BatchFailed {
                epoch,
                batch: b,
                rows: rows.clone(),
                source: Box::new(e),
            })?;
            if !g.nll.is_finite() {
                return Err(DgcnError::NonFiniteLoss { epoch, batch: b });
            }
            total += g.nll;
            let d_theta = Matrix::from_fn(1, nv, |_, v| (0..rows.len()).map(|p| g.d_theta[(p, v)]).sum());
            let d_rho = g.d_sigma2.iter().sum::<f64>() * sigmoid(rho);
            let grads = MlpGrads {
                weights: vec![d_theta],
                biases: vec![vec![d_rho]],
                input: Matrix::zeros(0, 0),
            };
            optimizer_step(&mut state, &mut params, &grads, &opt)?;
        }
        let mean_nll = total / ys.len() as f64;
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
    let theta = params.weights[0].row(0).to_vec();
    let sigma2 = sigma2_of(params.biases[0][0]);
    Ok(StationaryModel {
        index: NeighborIndex::build(xs.clone(), config.neighbor_strategy)?,
        theta,
        sigma2,
        scaler,
        x: xs,
        y: ys,
        k: config.predict_k.unwrap_or(config.batch_size),
        kernels,
        log,
    })
}

impl StationaryModel {
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Neighbour-batched prediction with the same `k` rule as the
    /// hypernetwork model; raw inputs in, raw-scale outputs out.
    pub fn predict(&self, xstar_raw: &Matrix, k: Option<usize>, opts: &PredictOptions) -> Result<Prediction> {
        let xs = self.scaler.transform_x(xstar_raw)?;
        let train = GpBatch::new(
            self.x.clone(),
            self.y.clone(),
            HyperField::constant(self.y.len(), &self.theta, self.sigma2),
        )?;
        let star = HyperField::constant(xs.rows(), &self.theta, self.sigma2);
        let mut p = knn_predict(&train, &self.index, &self.kernels, &xs, &star, k.unwrap_or(self.k), opts)?;
        let s = &self.scaler;
        p.mean = s.inverse_y(&p.mean);
        p.variance = s.inverse_variance(&p.variance);
        p.ci_low = s.inverse_y(&p.ci_low);
        p.ci_high = s.inverse_y(&p.ci_high);
        Ok(p)
    }
}
