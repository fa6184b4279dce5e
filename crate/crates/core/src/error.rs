//! Error taxonomy. The split mirrors the process exit codes: configuration
//! problems, data problems, and numeric failures are distinct outcomes.

use std::path::PathBuf;
use thiserror::Error;
use unigrf_tensor::TensorError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error kind: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Config(_) => 2,
            CoreError::Data(_) | CoreError::Io { .. } => 3,
            CoreError::Numeric(_) => 4,
            CoreError::Tensor(TensorError::NonFinite { .. }) => 4,
            CoreError::Tensor(TensorError::Io(_))
            | CoreError::Tensor(TensorError::Container(_)) => 3,
            CoreError::Tensor(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
