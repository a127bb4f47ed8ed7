use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two operands do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid caller-supplied data or parameters.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// k-core filtering (or another reduction) removed every interaction.
    #[error("dataset is empty after {0}")]
    EmptyDataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A forward trace was replayed against parameters it was not produced from.
    #[error("stale forward trace: {0}")]
    StaleTrace(String),

    /// No user in the batch pool has an unconsumed item left to sample.
    #[error("negative sampling exhausted: {0}")]
    Sampling(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
