use thiserror::Error;

/// Errors raised by the numeric routines, the solver and the simulators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the routine.
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed input data (NaN entries, non-monotone cdf samples, ...).
    #[error("invalid input: {0}")]
    Input(String),
    /// A documented precondition was violated by the caller, e.g. m > n.
    #[error("contract violation: {0}")]
    Contract(String),
    /// The scenario admits no feasible matching or operating point.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// An iterative routine failed to converge or drifted too far.
    #[error("numerical failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
