use std::path::PathBuf;

use rcft_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("state error: {0}")]
    State(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("repeat {repeat} failed: {source}")]
    Repeat {
        repeat: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("image format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for command-line use: 2 config, 3 data, 4 numeric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Format { .. } | Error::Io { .. } | Error::Checkpoint(_) => 3,
            Error::Stratification(_) | Error::Metric(_) | Error::Statistics(_) => 3,
            Error::Numeric(_) => 4,
            Error::Tensor(TensorError::NonFinite(_)) => 4,
            Error::Repeat { source, .. } => source.exit_code(),
            Error::State(_) | Error::Tensor(_) => 1,
        }
    }
}
