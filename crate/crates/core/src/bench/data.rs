use std::path::Path;
use std::str::FromStr;

use crate::error::{DgcnError, Result};
use crate::linalg::Matrix;
use crate::trainer::Dataset;

/// Which column holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Last,
    Name(String),
}

impl FromStr for TargetColumn {
    type Err = DgcnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" => Err(DgcnError::InvalidConfig("empty target column name".into())),
            "last" => Ok(TargetColumn::Last),
            name => Ok(TargetColumn::Name(name.to_string())),
        }
    }
}

/// A numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub values: Matrix,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Splits off the target column; the rest become inputs.
    pub fn into_dataset(self, target: &TargetColumn) -> Result<Dataset> {
        let t = match target {
            TargetColumn::Last => self
                .headers
                .len()
                .checked_sub(1)
                .ok_or_else(|| DgcnError::MissingColumn("last".into()))?,
            TargetColumn::Name(name) => self
                .column_index(name)
                .ok_or_else(|| DgcnError::MissingColumn(name.clone()))?,
        };
        let inputs: Vec<usize> = (0..self.headers.len()).filter(|&j| j != t).collect();
        let x = Matrix::from_fn(self.values.rows(), inputs.len(), |i, j| self.values[(i, inputs[j])]);
        let y = self.values.col_vec(t);
        let columns = inputs.iter().map(|&j| self.headers[j].clone()).collect();
        Dataset::with_names(x, y, columns, self.headers[t].clone())
    }

    /// The named columns in the given order.
    pub fn select(&self, names: &[String]) -> Result<Matrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| DgcnError::MissingColumn(n.clone())))
            .collect::<Result<_>>()?;
        Ok(Matrix::from_fn(self.values.rows(), idx.len(), |i, j| self.values[(i, idx[j])]))
    }
}

/// Reads a comma-separated numeric table. Rows are numbered as file lines
/// (the header is line 1) and columns from 1 in parse errors.
pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DgcnError::io(path, e))?;
    parse_table(file)
}

pub fn parse_table(input: impl std::io::Read) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DgcnError::Parse {
            row: 1,
            col: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() {
        return Err(DgcnError::InvalidDataset("no header row".into()));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, rec) in reader.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| DgcnError::Parse {
            row: line,
            col: 1,
            msg: e.to_string(),
        })?;
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DgcnError::Parse {
                row: line,
                col: c + 1,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(DgcnError::Parse {
                    row: line,
                    col: c + 1,
                    msg: format!("non-finite value {cell:?}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok(Table {
        values: Matrix::from_vec(rows, headers.len(), data)?,
        headers,
    })
}

pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset> {
    read_table(path)?.into_dataset(target)
}
