use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data-generating process: {0}")]
    InvalidDgp(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("quadrature failed to converge on [{lo}, {hi}] after {subdivisions} subdivisions")]
    Quadrature {
        lo: f64,
        hi: f64,
        subdivisions: usize,
    },

    #[error("no events in the dataset: the partial likelihood is unbounded below")]
    NoEvents,

    #[error("Newton iteration diverged: {0}")]
    Divergence(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
