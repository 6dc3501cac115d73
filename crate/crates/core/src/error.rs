use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numerical blow-up in {system} step from {state:?}")]
    NumericalBlowUp { system: String, state: Vec<f64> },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("unknown equilibrium `{name}` for system `{system}`")]
    UnknownEquilibrium { system: String, name: String },

    #[error(
        "inconsistent data: samples {first} and {second} share (x, u) but successors differ by {gap:e}"
    )]
    DataInconsistency {
        first: usize,
        second: usize,
        gap: f64,
    },

    #[error("sample {index} lies outside the declared bounds")]
    OutOfBounds { index: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("iteration cap of {0} reached before the unvisited set emptied")]
    IterationCap(usize),

    #[error("node {0} is not part of the tree")]
    UnknownNode(usize),

    #[error("target state is not a graph vertex")]
    MissingTarget,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True when the error reflects a broken internal invariant rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::IterationCap(_) | Error::Precondition(_))
    }
}
