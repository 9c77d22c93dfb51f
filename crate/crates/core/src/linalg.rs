//! Dense row-major matrices and the symmetric positive-definite toolkit the
//! GP layer is built on: jittered Cholesky, triangular solves, log-determinant
//! and the inverse assembled from the factor.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{DgcnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DgcnError::DimensionMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices; all rows must share one length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(DgcnError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// A single column built from a vector.
    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col_vec(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Gathers the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return Err(DgcnError::DimensionMismatch(format!(
                "cannot stack {} columns on {}",
                other.cols, self.cols
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(DgcnError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(DgcnError::DimensionMismatch(format!(
                "cannot multiply {}x{} by a vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_diagonal(&mut self, diag: &[f64]) {
        debug_assert!(self.is_square() && diag.len() == self.rows);
        for (i, d) in diag.iter().enumerate() {
            self.data[i * self.cols + i] += d;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(DgcnError::DimensionMismatch(format!(
                "cannot subtract {:?} from {:?}",
                other.shape(),
                self.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators let the compiler vectorize without reassociating
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// y += a * x
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Default jitter ladder: 0, then 1e-8 up to 1e-2 in decade steps.
pub fn default_jitter_ladder() -> Vec<f64> {
    let mut ladder = vec![0.0];
    ladder.extend((-8..=-2).map(|e| 10f64.powi(e)));
    ladder
}

#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: Matrix,
    jitter_used: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    /// Solves L·Y = B in place (B has `dim` rows, any number of columns).
    pub fn forward_solve_in_place(&self, b: &mut Matrix) {
        let n = self.dim();
        let m = b.cols;
        for i in 0..n {
            let li = self.lower.row(i);
            let (done, rest) = b.data.split_at_mut(i * m);
            let bi = &mut rest[..m];
            for (j, &lij) in li[..i].iter().enumerate() {
                if lij != 0.0 {
                    axpy(-lij, &done[j * m..(j + 1) * m], bi);
                }
            }
            let inv = 1.0 / li[i];
            bi.iter_mut().for_each(|v| *v *= inv);
        }
    }

    /// Solves Lᵀ·X = Y in place.
    pub fn backward_solve_in_place(&self, y: &mut Matrix) {
        let n = self.dim();
        let m = y.cols;
        for i in (0..n).rev() {
            let (head, tail) = y.data.split_at_mut((i + 1) * m);
            let yi = &mut head[i * m..];
            for j in i + 1..n {
                let lji = self.lower[(j, i)];
                if lji != 0.0 {
                    axpy(-lji, &tail[(j - i - 1) * m..(j - i) * m], yi);
                }
            }
            let inv = 1.0 / self.lower[(i, i)];
            yi.iter_mut().for_each(|v| *v *= inv);
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = solve_spd(self, &Matrix::column(b))?;
        Ok(x.into_vec())
    }

    /// The full inverse (L·Lᵀ)⁻¹, assembled as L⁻ᵀ·L⁻¹ from the factor.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        // L⁻¹ row by row: row i = (e_i − Σ_{k<i} L_ik · row k) / L_ii
        let mut linv = Matrix::zeros(n, n);
        for i in 0..n {
            let li = self.lower.row(i);
            let (done, rest) = linv.data.split_at_mut(i * n);
            let ri = &mut rest[..n];
            for (k, &lik) in li[..i].iter().enumerate() {
                if lik != 0.0 {
                    axpy(-lik, &done[k * n..k * n + k + 1], &mut ri[..k + 1]);
                }
            }
            ri[i] += 1.0;
            let inv = 1.0 / li[i];
            ri[..i + 1].iter_mut().for_each(|v| *v *= inv);
        }
        // (L⁻ᵀL⁻¹)_ij = Σ_k linv_ki · linv_kj, accumulated one row of L⁻¹ at a time
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let rk = linv.row(k);
            for i in 0..=k {
                let a = rk[i];
                if a != 0.0 {
                    axpy(a, &rk[..i + 1], &mut out.data[i * n..i * n + i + 1]);
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out.data[j * n + i] = out.data[i * n + j];
            }
        }
        out
    }
}

/// Plain Cholesky of A + jitter·I; `None` when a pivot is not strictly positive.
fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (li, lj) = if i == j {
                (l.row(i), l.row(i))
            } else {
                (l.row(i), l.row(j))
            };
            let s = a[(i, j)] - dot(&li[..j], &lj[..j]);
            if i == j {
                let d = s + jitter;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[(i, i)] = d.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Cholesky factorization retried up a jitter ladder. Only the lower triangle
/// of `a` is read.
pub fn cholesky_jittered(a: &Matrix, jitter_ladder: &[f64]) -> Result<CholeskyFactor> {
    if !a.is_square() {
        return Err(DgcnError::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    if jitter_ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DgcnError::InvalidConfig(
            "jitter ladder must be strictly increasing".into(),
        ));
    }
    for &jitter in jitter_ladder {
        if let Some(lower) = try_cholesky(a, jitter) {
            return Ok(CholeskyFactor {
                lower,
                jitter_used: jitter,
            });
        }
    }
    Err(DgcnError::NotPositiveDefinite {
        max_jitter: jitter_ladder.last().copied().unwrap_or(0.0),
    })
}

pub fn cholesky(a: &Matrix) -> Result<CholeskyFactor> {
    cholesky_jittered(a, &default_jitter_ladder())
}

/// Solves (L·Lᵀ)·X = B by a forward then a backward triangular solve.
pub fn solve_spd(factor: &CholeskyFactor, b: &Matrix) -> Result<Matrix> {
    if b.rows != factor.dim() {
        return Err(DgcnError::DimensionMismatch(format!(
            "factor has side {}, right-hand side has {} rows",
            factor.dim(),
            b.rows
        )));
    }
    let mut x = b.clone();
    factor.forward_solve_in_place(&mut x);
    factor.backward_solve_in_place(&mut x);
    Ok(x)
}

pub fn logdet(factor: &CholeskyFactor) -> f64 {
    2.0 * (0..factor.dim())
        .map(|i| factor.lower[(i, i)].ln())
        .sum::<f64>()
}
