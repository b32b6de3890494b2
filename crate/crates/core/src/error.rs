use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// The variants are coarse on purpose: the command-line front end maps them
/// onto exit codes (`ResourceGuard` → 3, everything else in the config or
/// precondition family → 2).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("infeasible construction: {0}")]
    Infeasible(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
