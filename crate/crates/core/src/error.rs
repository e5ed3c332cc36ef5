use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: expected {expected}, got {got:?}")]
    Shape {
        layer: String,
        expected: String,
        got: Vec<usize>,
    },

    #[error("invalid layer spec: {0}")]
    LayerSpec(String),

    #[error("backward called on {0} before forward")]
    BackwardBeforeForward(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("incompatible operator {operator} for slot {slot}: {reason}")]
    IncompatibleOperator {
        slot: usize,
        operator: String,
        reason: String,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(line: usize, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            msg: msg.into(),
        }
    }
}
