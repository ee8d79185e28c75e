use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("truncated file: header declares {expected} data bytes but only {actual} are present")]
    Truncated { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("landmark {index} lies outside the grid {dims:?}: {point:?}")]
    LandmarkOutOfBounds {
        index: usize,
        point: [f64; 3],
        dims: [usize; 3],
    },

    #[error("label {0} is missing from one of the masks")]
    MissingLabel(u16),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("optimization diverged at iteration {iteration}: objective {objective}")]
    Divergence { iteration: usize, objective: f64 },

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("incomplete case coverage: {0}")]
    IncompleteCoverage(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of a numerical procedure rather than bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_) | Error::Divergence { .. } | Error::RegistrationFailed(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
