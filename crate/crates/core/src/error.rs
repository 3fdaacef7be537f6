use std::io;
use std::path::PathBuf;

use crate::bias::BiasError;
use crate::tensor::TensorError;

/// Coarse failure class, mapped to process exit codes by the binary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Numeric,
    Data,
    Config,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Numeric => 1,
            Category::Data => 2,
            Category::Config => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Numeric => "numeric",
            Category::Data => "data",
            Category::Config => "config",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Bias(BiasError::Io { .. }) => Category::Data,
            Error::Config(_) | Error::Bias(_) => Category::Config,
            Error::Data(_) | Error::Io { .. } | Error::Checkpoint { .. } => Category::Data,
            Error::Numeric(_) | Error::Tensor(_) | Error::Diverged { .. } => Category::Numeric,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
