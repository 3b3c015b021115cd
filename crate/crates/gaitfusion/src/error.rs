//! Error type shared by the std-side crate: configuration problems are
//! distinguished from runtime failures so the CLI can map them to exit
//! codes 1 and 2 respectively.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Bad configuration: malformed config files, unknown keys, invalid
    /// model/train settings.
    Config(String),
    /// Runtime failure: IO, corrupt data, numeric errors.
    Runtime(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Runtime(e.to_string())
    }
}

impl From<gaitfusion_core::error::TensorError> for Error {
    fn from(e: gaitfusion_core::error::TensorError) -> Self {
        match e {
            gaitfusion_core::error::TensorError::Config(m) => Error::Config(m.to_string()),
            other => Error::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
