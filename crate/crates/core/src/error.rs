use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// The origin is a singularity of every scale-invariant function.
    #[error("objective evaluated at zero-norm point")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Domain(String),

    #[error("batch of size {0} is too small for batch normalization (need >= 2)")]
    BatchTooSmall(usize),

    #[error("degenerate batch statistics: zero variance in normalization layer {layer}")]
    ZeroVariance { layer: usize },

    #[error("objective `{id}` failed certification: {reason}")]
    Certification { id: String, reason: String },

    #[error("unknown objective id `{0}`")]
    UnknownObjective(String),

    #[error("no valid envelope: {0}")]
    Envelope(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
