//! Small dense multilayer perceptrons used as hypernetworks: one maps inputs
//! to per-point length-scales, the other to per-point noise variances.
//!
//! Training passes record a [`ForwardTape`] (noisy input, pre-activations,
//! dropout masks) which [`mlp_backward`] consumes; the tape is tied to the
//! parameter version it was recorded under.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{DgcnError, Result};
use crate::linalg::{axpy, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Relu,
    Linear,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
            Activation::Softplus => softplus(z),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Softplus => sigmoid(z),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Inverse of softplus, for picking an output bias that hits a target value.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_units: usize,
    pub out_units: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub units: usize,
    pub activation: Activation,
}

/// Topology of a hypernetwork, independent of the input/output widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub hidden: Vec<HiddenLayer>,
    pub output_activation: Activation,
    /// Initial value of every output bias.
    pub output_bias: f64,
}

impl NetSpec {
    /// 20-20-20 hidden units (sigmoid, sigmoid, ReLU) with a linear output
    /// that starts at length-scale 1.
    pub fn theta_default() -> Self {
        NetSpec {
            hidden: default_hidden(),
            output_activation: Activation::Linear,
            output_bias: 1.0,
        }
    }

    /// Same hidden stack, softplus output starting at σ² = 1e-2.
    pub fn sigma_default() -> Self {
        NetSpec {
            hidden: default_hidden(),
            output_activation: Activation::Softplus,
            output_bias: softplus_inverse(1e-2),
        }
    }

    pub fn layer_specs(&self, n_in: usize, n_out: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.hidden.len() + 1);
        let mut width = n_in;
        for h in &self.hidden {
            specs.push(LayerSpec {
                in_units: width,
                out_units: h.units,
                activation: h.activation,
            });
            width = h.units;
        }
        specs.push(LayerSpec {
            in_units: width,
            out_units: n_out,
            activation: self.output_activation,
        });
        specs
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|h| h.units == 0) {
            return Err(DgcnError::InvalidConfig("hidden layers need at least one unit".into()));
        }
        if !self.output_bias.is_finite() {
            return Err(DgcnError::InvalidConfig("output bias must be finite".into()));
        }
        Ok(())
    }
}

fn default_hidden() -> Vec<HiddenLayer> {
    vec![
        HiddenLayer {
            units: 20,
            activation: Activation::Sigmoid,
        },
        HiddenLayer {
            units: 20,
            activation: Activation::Sigmoid,
        },
        HiddenLayer {
            units: 20,
            activation: Activation::Relu,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    /// Inverted dropout on hidden activations.
    pub dropout_rate: f64,
    /// Gaussian noise added to the inputs.
    pub input_noise_std: f64,
}

impl RegularizerSpec {
    pub const NONE: RegularizerSpec = RegularizerSpec {
        dropout_rate: 0.0,
        input_noise_std: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DgcnError::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.input_noise_std >= 0.0) {
            return Err(DgcnError::InvalidConfig(format!(
                "input noise std must be non-negative, got {}",
                self.input_noise_std
            )));
        }
        Ok(())
    }
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec {
            dropout_rate: 0.1,
            input_noise_std: 0.01,
        }
    }
}

/// Weights (out × in per layer) and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    version: u64,
}

impl MlpParams {
    /// Glorot-uniform weights, zero hidden biases, `output_bias` on the last layer.
    pub fn init(specs: &[LayerSpec], output_bias: f64, rng: &mut impl Rng) -> Self {
        let mut weights = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for (l, s) in specs.iter().enumerate() {
            let limit = (6.0 / (s.in_units + s.out_units) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            weights.push(Matrix::from_fn(s.out_units, s.in_units, |_, _| dist.sample(rng)));
            let b = if l + 1 == specs.len() { output_bias } else { 0.0 };
            biases.push(vec![b; s.out_units]);
        }
        MlpParams {
            weights,
            biases,
            version: 0,
        }
    }

    pub fn from_parts(weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Self {
        MlpParams {
            weights,
            biases,
            version: 0,
        }
    }

    pub fn zeros_like(specs: &[LayerSpec]) -> Self {
        MlpParams {
            weights: specs
                .iter()
                .map(|s| Matrix::zeros(s.out_units, s.in_units))
                .collect(),
            biases: specs.iter().map(|s| vec![0.0; s.out_units]).collect(),
            version: 0,
        }
    }

    /// Bumped by every optimizer step; tapes recorded earlier become stale.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn check_shapes(&self, specs: &[LayerSpec]) -> Result<()> {
        let ok = self.weights.len() == specs.len()
            && self.biases.len() == specs.len()
            && specs.iter().enumerate().all(|(l, s)| {
                self.weights[l].shape() == (s.out_units, s.in_units)
                    && self.biases[l].len() == s.out_units
            })
            && specs.windows(2).all(|w| w[0].out_units == w[1].in_units);
        if ok {
            Ok(())
        } else {
            Err(DgcnError::DimensionMismatch(
                "parameters do not match the layer specs".into(),
            ))
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameter blocks in a fixed order: W1, b1, W2, b2, …
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Gradients laid out like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub input: Matrix,
}

impl MlpGrads {
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Everything a backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    version: u64,
    /// Input of each layer (after the previous layer's dropout mask).
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
    /// Per hidden layer, the multiplier applied to its activation (0 or 1/(1−p)).
    masks: Vec<Option<Matrix>>,
}

impl ForwardTape {
    pub fn masks(&self) -> &[Option<Matrix>] {
        &self.masks
    }

    /// Input actually fed to the first layer, noise included.
    pub fn noisy_input(&self) -> &Matrix {
        &self.inputs[0]
    }
}

fn check_input(specs: &[LayerSpec], x: &Matrix) -> Result<()> {
    let first = specs
        .first()
        .ok_or_else(|| DgcnError::DimensionMismatch("network has no layers".into()))?;
    if x.cols() != first.in_units {
        return Err(DgcnError::DimensionMismatch(format!(
            "network expects {} inputs, got {}",
            first.in_units,
            x.cols()
        )));
    }
    Ok(())
}

fn affine(w: &Matrix, b: &[f64], x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), w.rows());
    for n in 0..x.rows() {
        let xn = x.row(n);
        for (o, cell) in out.row_mut(n).iter_mut().enumerate() {
            *cell = dot(w.row(o), xn) + b[o];
        }
    }
    out
}

/// Deterministic forward pass with externally supplied noisy input and masks.
/// `masks[l]` multiplies the activation of hidden layer `l` (ignored for the
/// output layer).
pub fn forward_with_masks(
    params: &MlpParams,
    specs: &[LayerSpec],
    input: &Matrix,
    masks: &[Option<Matrix>],
) -> Result<(Matrix, ForwardTape)> {
    params.check_shapes(specs)?;
    check_input(specs, input)?;
    let last = specs.len() - 1;
    let mut inputs = Vec::with_capacity(specs.len());
    let mut pre = Vec::with_capacity(specs.len());
    let mut cur = input.clone();
    for (l, s) in specs.iter().enumerate() {
        let z = affine(&params.weights[l], &params.biases[l], &cur);
        let mut a = z.clone();
        a.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = s.activation.apply(*v));
        if l < last {
            if let Some(Some(m)) = masks.get(l) {
                if m.shape() != a.shape() {
                    return Err(DgcnError::DimensionMismatch("dropout mask shape".into()));
                }
                a.as_mut_slice()
                    .iter_mut()
                    .zip(m.as_slice())
                    .for_each(|(v, k)| *v *= k);
            }
        }
        inputs.push(cur);
        pre.push(z);
        cur = a;
    }
    let mut kept: Vec<Option<Matrix>> = masks.iter().take(last).cloned().collect();
    kept.resize(last, None);
    Ok((
        cur,
        ForwardTape {
            version: params.version,
            inputs,
            pre,
            masks: kept,
        },
    ))
}

/// Forward pass. In training mode Gaussian input noise and inverted dropout
/// are drawn from `rng`; in inference mode neither `rng` nor `reg` is touched.
pub fn mlp_forward(
    params: &MlpParams,
    specs: &[LayerSpec],
    x: &Matrix,
    reg: &RegularizerSpec,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Matrix, ForwardTape)> {
    check_input(specs, x)?;
    if !training {
        return forward_with_masks(params, specs, x, &[]);
    }
    reg.validate()?;
    let mut noisy = x.clone();
    if reg.input_noise_std > 0.0 {
        let normal = Normal::new(0.0, reg.input_noise_std).expect("valid std");
        noisy
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v += normal.sample(rng));
    }
    let p = reg.dropout_rate;
    let masks: Vec<Option<Matrix>> = specs[..specs.len() - 1]
        .iter()
        .map(|s| {
            (p > 0.0).then(|| {
                let keep = 1.0 / (1.0 - p);
                Matrix::from_fn(x.rows(), s.out_units, |_, _| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                })
            })
        })
        .collect();
    forward_with_masks(params, specs, &noisy, &masks)
}

/// Inference-mode convenience wrapper.
pub fn mlp_predict(params: &MlpParams, specs: &[LayerSpec], x: &Matrix) -> Result<Matrix> {
    forward_with_masks(params, specs, x, &[]).map(|(out, _)| out)
}

/// Exact gradients of Σ(upstream ⊙ output) with respect to every weight,
/// bias and the (noisy) input of the recorded forward pass.
pub fn mlp_backward(
    params: &MlpParams,
    specs: &[LayerSpec],
    tape: &ForwardTape,
    upstream: &Matrix,
) -> Result<MlpGrads> {
    if tape.version != params.version || tape.pre.len() != specs.len() {
        return Err(DgcnError::StaleMask);
    }
    params.check_shapes(specs)?;
    let out = &tape.pre[specs.len() - 1];
    if upstream.shape() != out.shape() {
        return Err(DgcnError::DimensionMismatch(format!(
            "upstream gradient is {:?}, output is {:?}",
            upstream.shape(),
            out.shape()
        )));
    }
    let n = upstream.rows();
    let mut gw: Vec<Matrix> = Vec::with_capacity(specs.len());
    let mut gb: Vec<Vec<f64>> = Vec::with_capacity(specs.len());
    // gradient with respect to the (masked) activation of the current layer
    let mut grad_act = upstream.clone();
    for l in (0..specs.len()).rev() {
        let s = specs[l];
        let z = &tape.pre[l];
        let mut delta = grad_act;
        if l + 1 < specs.len() {
            if let Some(m) = &tape.masks[l] {
                delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(m.as_slice())
                    .for_each(|(d, k)| *d *= k);
            }
        }
        delta
            .as_mut_slice()
            .iter_mut()
            .zip(z.as_slice())
            .for_each(|(d, zv)| *d *= s.activation.derivative(*zv));

        let input = &tape.inputs[l];
        let w = &params.weights[l];
        let mut grad_w = Matrix::zeros(s.out_units, s.in_units);
        let mut grad_b = vec![0.0; s.out_units];
        let mut grad_in = Matrix::zeros(n, s.in_units);
        for r in 0..n {
            let dr = delta.row(r);
            let xr = input.row(r);
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad_b[o] += d;
                axpy(d, xr, grad_w.row_mut(o));
                axpy(d, w.row(o), grad_in.row_mut(r));
            }
        }
        gw.push(grad_w);
        gb.push(grad_b);
        grad_act = grad_in;
    }
    gw.reverse();
    gb.reverse();
    Ok(MlpGrads {
        weights: gw,
        biases: gb,
        input: grad_act,
    })
}

/// One-half squared error of the inference-mode output.
pub fn mlp_loss_sq(params: &MlpParams, specs: &[LayerSpec], x: &Matrix, y: &Matrix) -> Result<f64> {
    let out = mlp_predict(params, specs, x)?;
    if out.shape() != y.shape() {
        return Err(DgcnError::DimensionMismatch(format!(
            "targets are {:?}, outputs are {:?}",
            y.shape(),
            out.shape()
        )));
    }
    Ok(0.5
        * out
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
}

/// A network's topology and weights together.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub specs: Vec<LayerSpec>,
    pub params: MlpParams,
}

impl Mlp {
    pub fn new(net: &NetSpec, n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let specs = net.layer_specs(n_in, n_out);
        let params = MlpParams::init(&specs, net.output_bias, rng);
        Mlp { specs, params }
    }

    pub fn n_in(&self) -> usize {
        self.specs[0].in_units
    }

    pub fn n_out(&self) -> usize {
        self.specs[self.specs.len() - 1].out_units
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        mlp_predict(&self.params, &self.specs, x)
    }

    pub fn forward_train(
        &self,
        x: &Matrix,
        reg: &RegularizerSpec,
        rng: &mut impl Rng,
    ) -> Result<(Matrix, ForwardTape)> {
        mlp_forward(&self.params, &self.specs, x, reg, true, rng)
    }

    pub fn backward(&self, tape: &ForwardTape, upstream: &Matrix) -> Result<MlpGrads> {
        mlp_backward(&self.params, &self.specs, tape, upstream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    Adam,
    Nadam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(DgcnError::InvalidConfig("learning rate must be positive".into()));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(DgcnError::InvalidConfig("betas must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(DgcnError::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Moment accumulators and step counter for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &MlpParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        OptimizerState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one update in place.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut MlpParams,
    grads: &MlpGrads,
    config: &OptimizerConfig,
) -> Result<()> {
    let gblocks = grads.blocks();
    let nblocks = state.m.len();
    if gblocks.len() != nblocks
        || gblocks
            .iter()
            .zip(&state.m)
            .any(|(g, m)| g.len() != m.len())
    {
        return Err(DgcnError::DimensionMismatch(
            "gradients do not match the parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, lr) = (config.beta1, config.beta2, config.epsilon, config.learning_rate);
    let bc1 = 1.0 - b1.powi(t);
    let bc1_next = 1.0 - b1.powi(t + 1);
    let bc2 = 1.0 - b2.powi(t);
    let mut pblocks = params.blocks_mut();
    for (k, g) in gblocks.iter().enumerate() {
        let p = &mut pblocks[k];
        match config.algorithm {
            Algorithm::Sgd => axpy(-lr, g, p),
            Algorithm::Adam | Algorithm::Nadam => {
                let (m, v) = (&mut state.m[k], &mut state.v[k]);
                for i in 0..g.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let v_hat = v[i] / bc2;
                    let direction = if config.algorithm == Algorithm::Adam {
                        m[i] / bc1
                    } else {
                        // Nesterov look-ahead: momentum of the next step plus the current gradient
                        b1 * m[i] / bc1_next + (1.0 - b1) * g[i] / bc1
                    };
                    p[i] -= lr * direction / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    params.version += 1;
    Ok(())
}
