use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("value iteration did not converge after {sweeps} sweeps (no proper policy?)")]
    Divergence { sweeps: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("particle weights degenerated (all log-weights are -inf)")]
    Degeneracy,
    #[error("invalid tolerance transition: {0}")]
    InvalidTransition(String),
    #[error("tolerance search has no bracketed solution")]
    NoSolution,
    #[error("{count} action assignments exceed the cap of {cap}")]
    AssignmentCap { count: u128, cap: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
