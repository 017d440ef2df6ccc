use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Interior coordinate whose update has a zero denominator.
    #[error("degenerate update at node {}: zero self-weight and vanishing evidence terms", .node + 1)]
    DegenerateNode { node: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("initial state is not polarized: {0}")]
    NotPolarized(String),

    #[error("schedule violates the activity assumptions: {0}")]
    InvalidSchedule(String),

    #[error("parameters leave the equilibrium family: {0}")]
    OutOfFamily(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
