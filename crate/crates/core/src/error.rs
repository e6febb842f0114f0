use thiserror::Error;

/// Errors raised by the exact mechanism and its building blocks.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Requested working precision is zero or above the platform maximum.
    #[error("invalid precision {requested} (must be in 1..={max})")]
    InvalidPrecision { requested: u64, max: u64 },

    /// A privacy or mechanism parameter violates its constraints.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data (weights, utilities, outcomes) is malformed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// More outcomes were supplied than the configuration allows.
    #[error("{got} outcomes exceeds the configured maximum of {max}")]
    TooManyOutcomes { got: usize, max: usize },

    /// An arithmetic step that must be exact was rounded.
    #[error("inexact arithmetic during {0}")]
    InexactArithmetic(&'static str),

    /// The working precision cannot represent the weight sums or isolate a
    /// single element when sampling.
    #[error("working precision was insufficient for exact sampling")]
    InsufficientPrecision,

    /// The rejection loop hit its safety cap, which indicates a broken bit source.
    #[error("rejection loop exceeded {0} iterations")]
    RetryLimit(u64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
