//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("node {node} has no edges")]
    NoEdges { node: usize },

    #[error("empty distribution: {0}")]
    EmptyDistribution(String),

    #[error("incompatible histograms: bin edges differ")]
    IncompatibleHistograms,

    #[error("structure has no edges")]
    NoStructureEdges,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("rank {r} out of range (must be in 1..={max})")]
    RankOutOfRange { r: usize, max: usize },

    #[error("eigensolver did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("loss node must be a scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("insufficient labels: {0}")]
    InsufficientLabels(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
}

impl Error {
    /// True for errors caused by bad inputs rather than numeric breakdown.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::NonConvergence { .. } | Error::Numeric(_) | Error::Diverged { .. }
        )
    }
}
