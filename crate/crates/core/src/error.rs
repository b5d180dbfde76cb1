use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The weighted sub-band sequence is identically zero.
    #[error("degenerate band {band}: weighted coefficients are all zero")]
    DegenerateBand { band: usize },

    /// A reflection coefficient reached the unit circle during the Levinson recursion.
    #[error("numerical degeneracy at Levinson stage {stage}: |k| = {magnitude}")]
    NumericalDegeneracy { stage: usize, magnitude: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("alignment error in utterance '{utterance}': {detail}")]
    Alignment { utterance: String, detail: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("unsupported weight file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
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

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
