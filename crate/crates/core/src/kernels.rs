//! The five correlation functions, evaluated on distances between warped
//! inputs z = θ(x) ⊙ x, and assembly of the summed covariance
//! K_s = K_1 + … + K_{n_k}.
//!
//! The per-point length-scale block Θ has `n_v · n_k` columns: columns
//! `[i·n_v, (i+1)·n_v)` scale the inputs seen by kernel `i`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DgcnError, Result};
use crate::linalg::Matrix;

const SQRT_3: f64 = 1.732_050_807_568_877_2;
const SQRT_5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelId {
    SquaredExp,
    AbsExp,
    Matern32,
    Matern52,
    /// `(1 + d/4)⁻²`: note the distance enters linearly, not squared.
    RationalQuadratic,
}

impl KernelId {
    pub const ALL: [KernelId; 5] = [
        KernelId::SquaredExp,
        KernelId::AbsExp,
        KernelId::Matern32,
        KernelId::Matern52,
        KernelId::RationalQuadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelId::SquaredExp => "squared_exp",
            KernelId::AbsExp => "abs_exp",
            KernelId::Matern32 => "matern32",
            KernelId::Matern52 => "matern52",
            KernelId::RationalQuadratic => "rational_quadratic",
        }
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelId {
    type Err = DgcnError;

    fn from_str(s: &str) -> Result<Self> {
        KernelId::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DgcnError::InvalidConfig(format!("unknown kernel {s:?}")))
    }
}

/// Correlation at distance `d ≥ 0`.
pub fn kernel_value(id: KernelId, d: f64) -> f64 {
    match id {
        KernelId::SquaredExp => (-0.5 * d * d).exp(),
        KernelId::AbsExp => (-d).exp(),
        KernelId::Matern32 => {
            let s = SQRT_3 * d;
            (1.0 + s) * (-s).exp()
        }
        KernelId::Matern52 => {
            let s = SQRT_5 * d;
            (1.0 + s + 5.0 / 3.0 * d * d) * (-s).exp()
        }
        KernelId::RationalQuadratic => {
            let b = 1.0 + 0.25 * d;
            1.0 / (b * b)
        }
    }
}

/// dk/dd. Zero at `d = 0` for every kernel: distance zero only arises on the
/// diagonal (or for duplicated points), where the correlation is pinned at 1.
pub fn kernel_deriv(id: KernelId, d: f64) -> f64 {
    if d == 0.0 {
        return 0.0;
    }
    match id {
        KernelId::SquaredExp => -d * (-0.5 * d * d).exp(),
        KernelId::AbsExp => -(-d).exp(),
        KernelId::Matern32 => -3.0 * d * (-SQRT_3 * d).exp(),
        KernelId::Matern52 => -5.0 / 3.0 * d * (1.0 + SQRT_5 * d) * (-SQRT_5 * d).exp(),
        KernelId::RationalQuadratic => {
            let b = 1.0 + 0.25 * d;
            -0.5 / (b * b * b)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KernelId>", into = "Vec<KernelId>")]
pub struct KernelSet {
    kernels: Vec<KernelId>,
}

impl KernelSet {
    pub fn new(kernels: Vec<KernelId>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(DgcnError::InvalidConfig("kernel set is empty".into()));
        }
        Ok(KernelSet { kernels })
    }

    pub fn single(id: KernelId) -> Self {
        KernelSet { kernels: vec![id] }
    }

    pub fn kernels(&self) -> &[KernelId] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

impl Default for KernelSet {
    fn default() -> Self {
        KernelSet {
            kernels: KernelId::ALL.to_vec(),
        }
    }
}

impl TryFrom<Vec<KernelId>> for KernelSet {
    type Error = DgcnError;

    fn try_from(v: Vec<KernelId>) -> Result<Self> {
        KernelSet::new(v)
    }
}

impl From<KernelSet> for Vec<KernelId> {
    fn from(s: KernelSet) -> Self {
        s.kernels
    }
}

/// Inputs multiplied elementwise by their own length-scales.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPoints {
    pub z: Matrix,
}

pub fn scale_points(x: &Matrix, theta: &Matrix) -> Result<ScaledPoints> {
    if x.shape() != theta.shape() {
        return Err(DgcnError::DimensionMismatch(format!(
            "points are {:?} but length-scales are {:?}",
            x.shape(),
            theta.shape()
        )));
    }
    let z = Matrix::from_vec(
        x.rows(),
        x.cols(),
        x.as_slice()
            .iter()
            .zip(theta.as_slice())
            .map(|(a, b)| a * b)
            .collect(),
    )?;
    Ok(ScaledPoints { z })
}

/// One warped copy of `x` per kernel, taken from that kernel's Θ column block.
pub fn scaled_blocks(set: &KernelSet, x: &Matrix, theta: &Matrix) -> Result<Vec<ScaledPoints>> {
    let nv = x.cols();
    if theta.rows() != x.rows() || theta.cols() != nv * set.len() {
        return Err(DgcnError::DimensionMismatch(format!(
            "Θ block must be {}x{} for {} kernels over {nv} inputs, got {:?}",
            x.rows(),
            nv * set.len(),
            set.len(),
            theta.shape()
        )));
    }
    Ok((0..set.len())
        .map(|k| {
            let z = Matrix::from_fn(x.rows(), nv, |i, v| theta[(i, k * nv + v)] * x[(i, v)]);
            ScaledPoints { z }
        })
        .collect())
}

#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Cross-covariance between two warped point sets.
pub fn cov_from_scaled(set: &KernelSet, za: &[ScaledPoints], zb: &[ScaledPoints]) -> Matrix {
    let na = za.first().map_or(0, |s| s.z.rows());
    let nb = zb.first().map_or(0, |s| s.z.rows());
    let mut out = Matrix::zeros(na, nb);
    for (k, &id) in set.kernels().iter().enumerate() {
        let (a, b) = (&za[k].z, &zb[k].z);
        for p in 0..na {
            let ap = a.row(p);
            let row = out.row_mut(p);
            for (q, cell) in row.iter_mut().enumerate() {
                *cell += kernel_value(id, distance(ap, b.row(q)));
            }
        }
    }
    out
}

/// Covariance of a warped set with itself; only the upper triangle is
/// evaluated and the diagonal is exactly `n_k`.
pub fn cov_symmetric_from_scaled(set: &KernelSet, z: &[ScaledPoints]) -> Matrix {
    let n = z.first().map_or(0, |s| s.z.rows());
    let mut out = Matrix::zeros(n, n);
    for (k, &id) in set.kernels().iter().enumerate() {
        let zk = &z[k].z;
        for p in 0..n {
            let zp = zk.row(p);
            for q in p + 1..n {
                out[(p, q)] += kernel_value(id, distance(zp, zk.row(q)));
            }
        }
    }
    let nk = set.len() as f64;
    for p in 0..n {
        out[(p, p)] = nk;
        for q in p + 1..n {
            out[(q, p)] = out[(p, q)];
        }
    }
    out
}

/// Summed covariance K_s between `(xa, theta_a)` and `(xb, theta_b)`.
pub fn cov_matrix(
    set: &KernelSet,
    xa: &Matrix,
    xb: &Matrix,
    theta_a: &Matrix,
    theta_b: &Matrix,
) -> Result<Matrix> {
    if xa.cols() != xb.cols() {
        return Err(DgcnError::DimensionMismatch(format!(
            "point sets have {} and {} inputs",
            xa.cols(),
            xb.cols()
        )));
    }
    let za = scaled_blocks(set, xa, theta_a)?;
    let zb = scaled_blocks(set, xb, theta_b)?;
    Ok(cov_from_scaled(set, &za, &zb))
}
