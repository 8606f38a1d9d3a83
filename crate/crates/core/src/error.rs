use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    Invalid(ValidationReport),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("observation kind does not match the emission family: {0}")]
    KindMismatch(String),

    #[error("observation at step {step} has zero probability under every state")]
    ZeroProbability { step: usize },

    #[error("innovation covariance is numerically singular at step {step} (rcond {rcond:e})")]
    SingularInnovation { step: usize, rcond: f64 },

    #[error("covariance lost positive semidefiniteness at step {step} (min eigenvalue {min_eig:e})")]
    Conditioning { step: usize, min_eig: f64 },

    #[error("predicted covariance at step {step} is singular; smoother gain undefined")]
    SingularPredicted { step: usize },

    #[error("{what}: Gram matrix is singular ({deficient} of {dim} directions deficient)")]
    SingularGram {
        what: &'static str,
        deficient: usize,
        dim: usize,
    },

    #[error("{0}")]
    Singular(String),

    #[error("oracle size guard exceeded: {0}")]
    Guard(String),

    #[error("sequence {index}: {source}")]
    Sequence {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_sequence(self, index: usize) -> Self {
        Error::Sequence {
            index,
            source: Box::new(self),
        }
    }

    /// Strips any sequence annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sequence { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!(),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}
