use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("conjugate tables do not share a grid")]
    GridMismatch,

    #[error("payoff is not constant on the blocks of the partition")]
    NotBlockConstant,

    #[error("agent group is empty")]
    EmptyGroup,

    #[error("classification inconclusive: {0}")]
    Inconclusive(String),

    #[error("finiteness certificate invalid: {0}")]
    CertificateInvalid(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
