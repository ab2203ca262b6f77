use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("incompatible: {0}")]
    Incompatible(String),

    /// Backward was called with an activation cache from a different
    /// parameter version.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// Some runs of a sweep failed; the rest were written.
    #[error("sweep incomplete: {0}")]
    SweepIncomplete(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 runtime, 3 diverged.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::InvalidParameter(_) => 1,
            Error::Incompatible(_) => 1,
            Error::TrainingDiverged(_) => 3,
            _ => 2,
        }
    }
}
