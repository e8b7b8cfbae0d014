use thiserror::Error;

/// Errors produced by hierarchy construction, estimation, and evaluation.
///
/// Variants split into three families so callers can map them onto process
/// exit codes: input validation, numerical failure, and insufficient data
/// (which is a validation problem at the interface level).
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("duplicate node {0:?} in hierarchy edges")]
    DuplicateNode(String),

    #[error("hierarchy contains a cycle through {0:?}")]
    CycleDetected(String),

    #[error("unknown node {0:?}")]
    UnknownNode(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error(
        "coordinate descent did not converge after {iterations} sweeps \
         (last max coefficient change {last_change:.3e}, tolerance {tolerance:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        tolerance: f64,
    },
}

impl Error {
    /// True for errors caused by bad or inconsistent inputs, as opposed to
    /// numerical breakdown during an otherwise valid computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::SingularSystem(_) | Error::NotPositiveDefinite(_) | Error::NonConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
