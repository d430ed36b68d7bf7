use std::path::PathBuf;

use crate::nn::CheckpointError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{context}: system is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { context: &'static str, condition: f64 },

    #[error("eigen solver failed: {0}")]
    Eigen(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{mode} information view is not valid here: {reason}")]
    InvalidMode { mode: String, reason: &'static str },

    #[error("replay buffer holds {have} samples, at least {need} required")]
    BufferUnderfilled { have: usize, need: usize },

    #[error("standardizer has not been frozen by a warm-up")]
    UnfrozenStandardizer,

    #[error("backward pass received a trace from a different network or infer-mode forward")]
    StaleTrace,

    #[error("unknown precoder `{0}`")]
    UnknownPrecoder(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("draw {index}: {source}")]
    Draw {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dimension(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownPrecoder(_) | Error::InvalidMode { .. } => 2,
            Error::MissingArtifact(_) | Error::Checkpoint(_) => 3,
            Error::Draw { source, .. } => source.exit_code(),
            Error::Io(_) | Error::Csv(_) => 1,
            _ => 4,
        }
    }
}
