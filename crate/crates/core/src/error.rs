use thiserror::Error;

/// Errors shared by the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Construction would produce a base graph that is not vertex-transitive.
    #[error("not vertex-transitive: {0}")]
    NotVertexTransitive(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// A walk exceeded its step budget; signals a misconfiguration since
    /// exits are almost surely finite.
    #[error("step budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
