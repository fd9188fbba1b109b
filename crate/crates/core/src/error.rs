use std::path::PathBuf;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky factorization failed even at the largest jitter level tried.
    #[error("matrix not positive definite after adding jitter {jitter:e}")]
    NumericalFailure { jitter: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A model failure raised inside a policy run.
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// Too many replications of an experiment failed.
    #[error("{message}")]
    ReplicationsFailed { message: String, numerical: bool },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Parse { what: String, detail: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the root cause is a numerical failure.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalFailure { .. } => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            Error::ReplicationsFailed { numerical, .. } => *numerical,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
