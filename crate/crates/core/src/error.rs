use thiserror::Error;

/// Errors raised by the filtering, combination and evaluation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("forgetting factor {0} outside (0, 1]")]
    ForgettingFactor(f64),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("degenerate weights: all model weights vanished")]
    DegenerateWeights,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid loss {0}: losses must be finite and nonnegative")]
    InvalidLoss(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
