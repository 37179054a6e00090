use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: empty corpus file")]
    EmptyFile { path: PathBuf },

    #[error("feature dimension mismatch: expected {expected}, found {found} ({context})")]
    FeatureDim {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    LengthOverflow { len: usize, max_len: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("non-finite value in {tensor}")]
    NonFinite { tensor: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised by a diverging training run.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::NonFinite { .. } => true,
            Error::Cell { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}
