use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DgcnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DgcnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite (largest jitter tried: {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("backward pass requested without a matching training forward pass")]
    StaleMask,

    #[error("alpha level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("training failed at epoch {epoch}, batch {batch} (rows {rows:?}): {source}")]
    BatchFailed {
        epoch: usize,
        batch: usize,
        rows: Vec<usize>,
        #[source]
        source: Box<DgcnError>,
    },

    #[error("schema mismatch: expected {expected} input columns, found {found}")]
    SchemaMismatch { expected: usize, found: usize },

    #[error("series too short: need more than {needed} values, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("model file format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u8, expected: u8 },

    #[error("model file checksum mismatch or truncated file")]
    ChecksumMismatch,

    #[error("not a model file: {0}")]
    InvalidFormat(String),

    #[error("memory cap exceeded: {needed} bytes needed, cap is {cap}")]
    MemoryCapExceeded { needed: u64, cap: u64 },
}

impl DgcnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DgcnError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than the inputs' shape.
    pub fn is_numeric(&self) -> bool {
        match self {
            DgcnError::NotPositiveDefinite { .. } | DgcnError::NonFiniteLoss { .. } => true,
            DgcnError::BatchFailed { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
