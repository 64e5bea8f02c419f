use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("plane fit failed: {0}")]
    FitFailure(String),

    #[error("degenerate facing: left and right hip coincide in the xy-plane")]
    DegenerateFacing,

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("projection error: joint {joint} has camera depth {depth}")]
    Projection { joint: usize, depth: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("batch size {0} is too small, at least 2 rows are required")]
    BatchSize(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable category name used by the CLI when reporting failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::InsufficientData(_) => "insufficient-data",
            Error::FitFailure(_) => "fit-failure",
            Error::DegenerateFacing => "degenerate-facing",
            Error::Normalization(_) => "normalization",
            Error::Projection { .. } => "projection",
            Error::Shape(_) => "shape",
            Error::State(_) => "state",
            Error::BatchSize(_) => "batch-size",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
