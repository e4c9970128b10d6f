use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed something structurally wrong (dimension mismatch,
    /// index out of range, empty dataset, non-finite input).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file could not be parsed.
    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Loaded data or model violates a structural constraint.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical procedure failed (non-convergence, divergence,
    /// non-finite intermediate values).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
