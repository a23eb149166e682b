use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite value in row for item '{item_id}'")]
    NonFinite { item_id: String },

    #[error("missing feature row for item '{0}'")]
    MissingItem(String),

    #[error("item sets differ: first divergent id '{0}'")]
    ItemMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance factorization failed (smallest eigenvalue estimate {min_eigenvalue:e})")]
    Factorization { min_eigenvalue: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("missing cell (model '{model}', dataset '{dataset}', extractor '{extractor}')")]
    MissingCell {
        model: String,
        dataset: String,
        extractor: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
