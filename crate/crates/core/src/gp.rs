//! The GP layer: marginal likelihood of a batch under per-point length-scales
//! and noise variances, its gradient back into both hypernetworks, and
//! posterior prediction with confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{DgcnError, Result};
use crate::hypernet::{Mlp, MlpGrads, ForwardTape};
use crate::kernels::{
    cov_from_scaled, cov_symmetric_from_scaled, distance, kernel_deriv, scaled_blocks, KernelSet,
    ScaledPoints,
};
use crate::linalg::{cholesky_jittered, default_jitter_ladder, dot, logdet, CholeskyFactor, Matrix};

/// Lower bound added to every predicted noise variance.
pub const SIGMA2_FLOOR: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-point hyperparameters: length-scale block Θ (N × n_v·n_k) and σ².
#[derive(Debug, Clone, PartialEq)]
pub struct HyperField {
    pub theta: Matrix,
    pub sigma2: Vec<f64>,
}

impl HyperField {
    pub fn new(theta: Matrix, sigma2: Vec<f64>) -> Result<Self> {
        if theta.rows() != sigma2.len() {
            return Err(DgcnError::DimensionMismatch(format!(
                "Θ has {} rows but σ² has {} entries",
                theta.rows(),
                sigma2.len()
            )));
        }
        Ok(HyperField { theta, sigma2 })
    }

    /// Every row shares one Θ vector and one σ².
    pub fn constant(n: usize, theta_row: &[f64], sigma2: f64) -> Self {
        HyperField {
            theta: Matrix::from_fn(n, theta_row.len(), |_, j| theta_row[j]),
            sigma2: vec![sigma2; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sigma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma2.is_empty()
    }

    pub fn select_rows(&self, idx: &[usize]) -> HyperField {
        HyperField {
            theta: self.theta.select_rows(idx),
            sigma2: idx.iter().map(|&i| self.sigma2[i]).collect(),
        }
    }
}

/// Training points, standardized targets and their hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GpBatch {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub hyper: HyperField,
}

impl GpBatch {
    pub fn new(x: Matrix, y: Vec<f64>, hyper: HyperField) -> Result<Self> {
        let n = x.rows();
        if n == 0 {
            return Err(DgcnError::EmptyDataset);
        }
        if y.len() != n || hyper.len() != n {
            return Err(DgcnError::DimensionMismatch(format!(
                "batch has {n} points, {} targets and {} hyperparameter rows",
                y.len(),
                hyper.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DgcnError::InvalidDataset("non-finite target in batch".into()));
        }
        Ok(GpBatch { x, y, hyper })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// (K_s + diag σ²) for a batch, factorized.
struct Factorized {
    z: Vec<ScaledPoints>,
    factor: CholeskyFactor,
    alpha: Vec<f64>,
}

fn factorize(batch: &GpBatch, set: &KernelSet, ladder: &[f64]) -> Result<Factorized> {
    let z = scaled_blocks(set, &batch.x, &batch.hyper.theta)?;
    let mut k = cov_symmetric_from_scaled(set, &z);
    k.add_diagonal(&batch.hyper.sigma2);
    let factor = cholesky_jittered(&k, ladder)?;
    let alpha = factor.solve_vec(&batch.y)?;
    Ok(Factorized { z, factor, alpha })
}

fn nll_from(batch: &GpBatch, f: &Factorized) -> f64 {
    0.5 * dot(&batch.y, &f.alpha) + 0.5 * logdet(&f.factor) + batch.len() as f64 * HALF_LN_2PI
}

/// Negative log marginal likelihood of the batch.
pub fn nll(batch: &GpBatch, set: &KernelSet) -> Result<f64> {
    let f = factorize(batch, set, &default_jitter_ladder())?;
    Ok(nll_from(batch, &f))
}

/// NLL and its gradient with respect to the hyperparameter field.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrad {
    pub nll: f64,
    pub d_theta: Matrix,
    pub d_sigma2: Vec<f64>,
    pub jitter_used: f64,
}

/// Gradient of the NLL with respect to every Θ entry and every σ².
///
/// With A = K_s + D and α = A⁻¹y, ∂NLL/∂A = ½(A⁻¹ − ααᵀ). Each off-diagonal
/// A_pq depends on the warped points z_p, z_q of every kernel through their
/// distance, and z_pv = Θ_pv · x_pv.
pub fn nll_hyper_grad(batch: &GpBatch, set: &KernelSet) -> Result<HyperGrad> {
    nll_hyper_grad_with(batch, set, &default_jitter_ladder())
}

pub fn nll_hyper_grad_with(batch: &GpBatch, set: &KernelSet, ladder: &[f64]) -> Result<HyperGrad> {
    let f = factorize(batch, set, ladder)?;
    let value = nll_from(batch, &f);
    let n = batch.len();
    let nv = batch.x.cols();

    // g = 2·∂NLL/∂A off the diagonal (A_pq and A_qp are the same quantity)
    let mut g = f.factor.inverse();
    for p in 0..n {
        let row = g.row_mut(p);
        for q in 0..n {
            row[q] -= f.alpha[p] * f.alpha[q];
        }
    }
    let d_sigma2: Vec<f64> = (0..n).map(|p| 0.5 * g[(p, p)]).collect();

    let mut d_theta = Matrix::zeros(n, nv * set.len());
    let mut dz = vec![0.0; n * nv];
    for (k, &id) in set.kernels().iter().enumerate() {
        let z = &f.z[k].z;
        dz.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..n {
            let zp = z.row(p);
            let gp = g.row(p);
            for q in p + 1..n {
                let zq = z.row(q);
                let d = distance(zp, zq);
                if d == 0.0 {
                    continue;
                }
                let w = gp[q] * kernel_deriv(id, d) / d;
                if w == 0.0 {
                    continue;
                }
                let (lo, hi) = dz.split_at_mut(q * nv);
                let dzp = &mut lo[p * nv..(p + 1) * nv];
                let dzq = &mut hi[..nv];
                for v in 0..nv {
                    let diff = w * (zp[v] - zq[v]);
                    dzp[v] += diff;
                    dzq[v] -= diff;
                }
            }
        }
        for p in 0..n {
            let xp = batch.x.row(p);
            let out = &mut d_theta.row_mut(p)[k * nv..(k + 1) * nv];
            for v in 0..nv {
                out[v] = dz[p * nv + v] * xp[v];
            }
        }
    }
    Ok(HyperGrad {
        nll: value,
        d_theta,
        d_sigma2,
        jitter_used: f.factor.jitter_used(),
    })
}

/// NLL gradient carried back through both hypernetworks.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub hyper: HyperGrad,
    pub theta_net: MlpGrads,
    pub sigma_net: MlpGrads,
}

/// Full chain: NLL → (Θ, σ²) → network weights. The tapes must come from the
/// training forward passes that produced `batch.hyper`; the σ² network's
/// output feeds σ² through an additive floor, so its upstream gradient is
/// ∂NLL/∂σ² unchanged.
pub fn nll_grad(
    batch: &GpBatch,
    set: &KernelSet,
    theta_net: &Mlp,
    theta_tape: &ForwardTape,
    sigma_net: &Mlp,
    sigma_tape: &ForwardTape,
) -> Result<NetGrads> {
    nll_grad_with(batch, set, theta_net, theta_tape, sigma_net, sigma_tape, &default_jitter_ladder())
}

pub fn nll_grad_with(
    batch: &GpBatch,
    set: &KernelSet,
    theta_net: &Mlp,
    theta_tape: &ForwardTape,
    sigma_net: &Mlp,
    sigma_tape: &ForwardTape,
    ladder: &[f64],
) -> Result<NetGrads> {
    let hyper = nll_hyper_grad_with(batch, set, ladder)?;
    let theta_grads = theta_net.backward(theta_tape, &hyper.d_theta)?;
    let sigma_grads = sigma_net.backward(sigma_tape, &Matrix::column(&hyper.d_sigma2))?;
    Ok(NetGrads {
        hyper,
        theta_net: theta_grads,
        sigma_net: sigma_grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// mean ± t(1−α/2, N−1)·√V/√N, with N the number of training points used.
    #[default]
    StudentT,
    /// mean ± z(1−α/2)·√V.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub alpha_level: f64,
    pub include_noise: bool,
    pub interval: IntervalKind,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            alpha_level: 0.05,
            include_noise: false,
            interval: IntervalKind::StudentT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub alpha_level: f64,
    /// Negative round-off variances that were clamped to zero.
    pub clamped: usize,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn empty(alpha_level: f64) -> Self {
        Prediction {
            alpha_level,
            ..Default::default()
        }
    }
}

fn check_alpha(alpha_level: f64) -> Result<()> {
    if alpha_level > 0.0 && alpha_level < 1.0 {
        Ok(())
    } else {
        Err(DgcnError::InvalidAlpha(alpha_level))
    }
}

/// Student-t quantile at `p` with `df` degrees of freedom.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

/// Interval mean ± t(1−α/2, N−1)·√V/√N. With fewer than two training points
/// there are no degrees of freedom and the interval is unbounded.
pub fn confidence_interval(
    mean: &[f64],
    variance: &[f64],
    n: usize,
    alpha_level: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    interval(mean, variance, n, alpha_level, IntervalKind::StudentT)
}

pub fn interval(
    mean: &[f64],
    variance: &[f64],
    n: usize,
    alpha_level: f64,
    kind: IntervalKind,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_alpha(alpha_level)?;
    if mean.len() != variance.len() {
        return Err(DgcnError::DimensionMismatch(
            "means and variances differ in length".into(),
        ));
    }
    let p = 1.0 - alpha_level / 2.0;
    let scale = match kind {
        IntervalKind::StudentT if n >= 2 => {
            student_t_quantile(p, (n - 1) as f64) / (n as f64).sqrt()
        }
        IntervalKind::StudentT => f64::INFINITY,
        IntervalKind::Normal => Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p),
    };
    let half: Vec<f64> = variance
        .iter()
        .map(|v| if *v == 0.0 { 0.0 } else { scale * v.max(0.0).sqrt() })
        .collect();
    Ok((
        mean.iter().zip(&half).map(|(m, h)| m - h).collect(),
        mean.iter().zip(&half).map(|(m, h)| m + h).collect(),
    ))
}

/// A factorized training batch, reusable for any number of test points.
pub struct Posterior<'a> {
    batch: &'a GpBatch,
    set: &'a KernelSet,
    f: Factorized,
}

impl<'a> Posterior<'a> {
    pub fn new(batch: &'a GpBatch, set: &'a KernelSet) -> Result<Self> {
        let f = factorize(batch, set, &default_jitter_ladder())?;
        Ok(Posterior { batch, set, f })
    }

    pub fn jitter_used(&self) -> f64 {
        self.f.factor.jitter_used()
    }

    /// Latent mean and clamped variance (noise included on request), plus the
    /// number of clamped variances.
    pub fn moments(
        &self,
        xstar: &Matrix,
        hyper_star: &HyperField,
        include_noise: bool,
    ) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        if xstar.cols() != self.batch.x.cols() {
            return Err(DgcnError::DimensionMismatch(format!(
                "test points have {} inputs, training points {}",
                xstar.cols(),
                self.batch.x.cols()
            )));
        }
        if hyper_star.len() != xstar.rows() {
            return Err(DgcnError::DimensionMismatch(
                "one hyperparameter row per test point required".into(),
            ));
        }
        let zs = scaled_blocks(self.set, xstar, &hyper_star.theta)?;
        // N × N_* cross covariance
        let mut kstar = cov_from_scaled(self.set, &self.f.z, &zs);
        let m = xstar.rows();
        let mut mean = vec![0.0; m];
        for (i, &a) in self.f.alpha.iter().enumerate() {
            for (mj, kij) in mean.iter_mut().zip(kstar.row(i)) {
                *mj += kij * a;
            }
        }
        self.f.factor.forward_solve_in_place(&mut kstar);
        let prior = self.set.len() as f64;
        let mut reduce = vec![0.0; m];
        for i in 0..kstar.rows() {
            for (r, v) in reduce.iter_mut().zip(kstar.row(i)) {
                *r += v * v;
            }
        }
        let mut clamped = 0;
        let variance = reduce
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let mut v = prior - r;
                if v < 0.0 {
                    clamped += 1;
                    v = 0.0;
                }
                if include_noise {
                    v += hyper_star.sigma2[j];
                }
                v
            })
            .collect();
        Ok((mean, variance, clamped))
    }

    pub fn predict(
        &self,
        xstar: &Matrix,
        hyper_star: &HyperField,
        opts: &PredictOptions,
    ) -> Result<Prediction> {
        check_alpha(opts.alpha_level)?;
        let (mean, variance, clamped) = self.moments(xstar, hyper_star, opts.include_noise)?;
        let (ci_low, ci_high) = interval(
            &mean,
            &variance,
            self.batch.len(),
            opts.alpha_level,
            opts.interval,
        )?;
        Ok(Prediction {
            mean,
            variance,
            ci_low,
            ci_high,
            alpha_level: opts.alpha_level,
            clamped,
        })
    }
}

/// Posterior mean, variance and interval at `xstar` given the training batch.
pub fn predict(
    train: &GpBatch,
    xstar: &Matrix,
    hyper_star: &HyperField,
    set: &KernelSet,
    opts: &PredictOptions,
) -> Result<Prediction> {
    check_alpha(opts.alpha_level)?;
    Posterior::new(train, set)?.predict(xstar, hyper_star, opts)
}
