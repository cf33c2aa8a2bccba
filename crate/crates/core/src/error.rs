use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {what} of size {size}")]
    Range {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate {what}: {key}")]
    Duplicate { what: &'static str, key: String },

    #[error("unknown {what}: {key}")]
    Unknown { what: &'static str, key: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 for configuration, 4 for numeric failure, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn unknown(what: &'static str, key: impl Into<String>) -> Self {
        Error::Unknown {
            what,
            key: key.into(),
        }
    }

    pub(crate) fn duplicate(what: &'static str, key: impl Into<String>) -> Self {
        Error::Duplicate {
            what,
            key: key.into(),
        }
    }
}
