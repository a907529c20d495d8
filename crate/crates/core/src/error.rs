//! Error type shared across the crate.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Tensor shape mismatch; names both offending shapes.
    Shape(String),
    /// A published operation produced or consumed a NaN/Inf.
    NonFinite(String),
    /// Malformed input data (keypoint files, manifests, configs).
    Format(String),
    /// Underlying I/O failure with the path it happened on.
    Io(String),
    /// Checkpoint payload failed validation (magic, version, checksum).
    Checkpoint(String),
    /// Invalid argument or configuration value.
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io(m) => write!(f, "io error: {m}"),
            Error::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            Error::Invalid(m) => write!(f, "invalid argument: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io(format!("{}: {err}", path.display()))
    }
}
