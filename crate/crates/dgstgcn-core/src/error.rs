//! Error types shared across the crate.
//!
//! The three non-IO categories map onto CLI exit codes: configuration/usage
//! problems, data/format problems, and numerical failures.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration: bad hyper-parameters, inconsistent variant
    /// combinations, malformed config files.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid data: labels out of range, empty sequences, mismatched sample
    /// counts.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed binary file. `offset` is the byte position at which the
    /// problem was detected.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Tensor shape mismatch, reported with both shapes.
    #[error("dimension error: {context}: {lhs:?} vs {rhs:?}")]
    Shape {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Non-finite values, divergence, failed numerical checks.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn shape(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
