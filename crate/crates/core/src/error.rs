use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged: member {member} produced a non-finite loss in epoch {epoch}")]
    Training { member: usize, epoch: usize },

    #[error(
        "calibration infeasible: index K={k} exceeds N={n}; the smallest achievable delta is 1/(N+1) = {min_delta}"
    )]
    Calibration { n: usize, k: usize, min_delta: f64 },

    #[error("numerical routine failed to converge: {0}")]
    Convergence(String),

    #[error("search did not terminate within {0} iterations")]
    Search(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
