use thiserror::Error;

/// Errors produced by loading, fitting, and bound computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed csv at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error("design error: {0}")]
    Design(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
