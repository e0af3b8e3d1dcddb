use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown entity id {0}")]
    UnknownEntity(u32),

    #[error("relation id {0} is not a forward relation")]
    NotForwardRelation(u32),

    #[error("empty path set for pair ({head}, {tail})")]
    EmptyPathSet { head: u32, tail: u32 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("training diverged at iteration {iteration}: {message}")]
    Diverged { iteration: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
