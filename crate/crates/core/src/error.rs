use std::io;

use thiserror::Error;

/// Failure classes shared by every stage of the pipeline.
///
/// The variants map one-to-one onto the CLI exit codes: validation problems
/// (`Domain`, `Range`, `Dimension`) exit with 1, `Numeric` with 2 and `Io`
/// with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("malformed artifact: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for errors caused by bad inputs rather than by the computation.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Range(_) | Error::Dimension(_))
    }
}
