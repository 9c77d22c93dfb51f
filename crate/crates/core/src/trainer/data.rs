use serde::{Deserialize, Serialize};

use crate::error::{DgcnError, Result};
use crate::linalg::Matrix;

/// Inputs, a scalar response and the column names of both.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub columns: Vec<String>,
    pub target: String,
}

impl Dataset {
    /// Validates shape and finiteness. Columns default to `x0, x1, …`.
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        let columns = (0..x.cols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, columns, "y".into())
    }

    pub fn with_names(x: Matrix, y: Vec<f64>, columns: Vec<String>, target: String) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(DgcnError::InvalidDataset(format!(
                "{} input rows but {} targets",
                x.rows(),
                y.len()
            )));
        }
        if columns.len() != x.cols() {
            return Err(DgcnError::InvalidDataset(format!(
                "{} column names for {} inputs",
                columns.len(),
                x.cols()
            )));
        }
        if x.rows() < 2 {
            return Err(DgcnError::InvalidDataset(format!(
                "at least 2 rows required, got {}",
                x.rows()
            )));
        }
        if x.cols() == 0 {
            return Err(DgcnError::InvalidDataset("no input columns".into()));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(DgcnError::InvalidDataset("non-finite value".into()));
        }
        Ok(Dataset {
            x,
            y,
            columns,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.x.cols()
    }

    /// Rows in the given order. Panics on an out-of-range index.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            columns: self.columns.clone(),
            target: self.target.clone(),
        }
    }
}

/// Floor applied to every standard deviation, so constant columns map to 0.
pub const STD_FLOOR: f64 = 1e-12;

/// Column-wise affine standardization of inputs and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl Scaler {
    /// Population mean and standard deviation per column. With
    /// `standardize_y` off the target passes through unchanged.
    pub fn fit(data: &Dataset, standardize_y: bool) -> Self {
        let (x_mean, x_std) = (0..data.x.cols())
            .map(|j| mean_std((0..data.x.rows()).map(move |i| data.x[(i, j)])))
            .unzip();
        let (y_mean, y_std) = if standardize_y {
            mean_std(data.y.iter().copied())
        } else {
            (0.0, 1.0)
        };
        Scaler {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.x_mean.len()
    }

    pub fn transform_x(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.n_inputs() {
            return Err(DgcnError::SchemaMismatch {
                expected: self.n_inputs(),
                found: x.cols(),
            });
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x[(i, j)] - self.x_mean[j]) / self.x_std[j]
        }))
    }

    pub fn inverse_x(&self, xs: &Matrix) -> Matrix {
        Matrix::from_fn(xs.rows(), xs.cols(), |i, j| {
            xs[(i, j)] * self.x_std[j] + self.x_mean[j]
        })
    }

    pub fn transform_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.y_mean) / self.y_std).collect()
    }

    pub fn inverse_y(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().map(|v| v * self.y_std + self.y_mean).collect()
    }

    pub fn inverse_variance(&self, var: &[f64]) -> Vec<f64> {
        let s2 = self.y_std * self.y_std;
        var.iter().map(|v| v * s2).collect()
    }
}
