use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped by the exit-code family the CLI maps them onto:
/// configuration, data, and numeric divergence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("backward called on an empty tape (no forward pass recorded)")]
    TapeEmpty,

    #[error("batch normalization needs at least 2 samples in training mode, got {0}")]
    DegenerateBatch(usize),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("parse error at row {row}, column \"{column}\": cannot read {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("column \"{0}\" is constant on the fitting rows (zero variance)")]
    ConstantColumn(String),

    #[error("column \"{0}\" has no present values to impute from")]
    UnimputableColumn(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("degenerate neighborhood: {0}")]
    DegenerateNeighborhood(String),

    #[error("window length {window} exceeds row count {rows}")]
    Window { window: usize, rows: usize },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 configuration, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Range(_) => 2,
            Error::Divergence { .. } | Error::NonFiniteGradient(_) => 4,
            _ => 3,
        }
    }
}
