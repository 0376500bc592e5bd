use thiserror::Error;

/// Error type shared by the whole crate.
///
/// The variants mirror the failure classes of the public operations: domain
/// errors for invalid mathematical inputs, precondition errors for contract
/// violations, computation errors for numerical failures that should never
/// happen on valid inputs, resource errors for size guards, and config errors
/// for rejected experiment configurations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("computation failed: {0}")]
    Computation(String),
    #[error("resource guard exceeded: {0}")]
    Resource(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
