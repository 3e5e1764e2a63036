use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid model spec: {0}")]
    ModelSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },

    #[error("state dimension {dim} exceeds the dense cap {cap}; use the rk4 integrator instead")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("eigensolver did not converge: {0}")]
    Eigen(String),

    #[error("{path}: byte offset {offset}: {message}")]
    Idx {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("missing artifact {0}; run the producing command first")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category, used as the CLI diagnostic prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Topology(_) => "topology",
            Error::ModelSpec(_) => "model",
            Error::InvalidArgument(_) => "argument",
            Error::NonFinite { .. } => "non-finite",
            Error::DenseCapExceeded { .. } => "dense-cap",
            Error::Eigen(_) => "eigen",
            Error::Idx { .. } => "idx",
            Error::Config { .. } => "config",
            Error::MissingArtifact(_) => "missing-artifact",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
