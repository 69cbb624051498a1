use thiserror::Error;

/// Errors raised by the numerical kernels, the operators built on them and
/// the instance/format readers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("structural error: zero pivot at index {pivot}, matrix is not quasi-definite")]
    ZeroPivot { pivot: usize },

    #[error("degenerate constraint data: normal matrix pivot {pivot} = {value:e}, constraints are linearly dependent")]
    DegenerateData { pivot: usize, value: f64 },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("dense oracle refused: size {size} exceeds cap {cap}")]
    OracleRefused { size: usize, cap: usize },

    #[error("unsupported feature: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
