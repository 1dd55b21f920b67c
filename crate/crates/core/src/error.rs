//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the library.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes do not conform to an operation's contract.
    Dimension(String),
    /// An operation produced a NaN or infinite value.
    Numeric(String),
    /// Invalid argument or data (labels out of range, bad config values, ...).
    Input(String),
    /// A container's declared layout does not match its spec (wrong field value).
    Format(String),
    /// A byte stream could not be decoded (truncation, bad magic, ...).
    Parse(String),
    /// A checkpoint's tensor set disagrees with its embedded config.
    Consistency(String),
    /// An API precondition unrelated to shapes was violated.
    Contract(String),
    /// A metric has no defined value on the given data.
    MetricUndefined(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Input(m) => write!(f, "input error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Consistency(m) => write!(f, "consistency error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::MetricUndefined(m) => write!(f, "metric undefined: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
