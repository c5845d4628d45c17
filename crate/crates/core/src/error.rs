use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// The stacked operator lost full column rank, i.e. the null spaces of the
    /// data and regularization terms intersect nontrivially.
    #[error("null-space condition violated: {0}")]
    NullSpace(String),
    /// Parameter iterates left the trust region of the run.
    #[error("parameter iteration diverged: {0}")]
    Diverged(String),
    /// The requested configuration cannot be executed.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
