//! Crate-wide error type.
//!
//! Variants split into two broad classes that the CLI maps onto distinct
//! exit codes: *validation* errors (bad arguments, mismatched artifacts —
//! the caller gave us something unusable) and *numerical* errors (the
//! computation itself failed: divergence, singular matrices, impossible
//! observations).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("schedule construction failed: {0}")]
    Schedule(String),

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("non-monotone diagonal sequence: coordinate {coord} rises from {from} to {to} between knots {knot} and {}", .knot + 1)]
    NonMonotone {
        coord: usize,
        knot: usize,
        from: f64,
        to: f64,
    },

    #[error("inconsistent transition matrices: {0}")]
    InconsistentMatrices(String),

    #[error("impossible observation: {0}")]
    ImpossibleObservation(String),

    #[error("denoiser contract violation: {0}")]
    ContractViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than failed computation.
    /// The CLI exits 1 for these and 2 for everything else.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::ArtifactMismatch(_)
                | Error::Serialization(_)
                | Error::Io(_)
        )
    }
}
