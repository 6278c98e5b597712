use thiserror::Error;

/// Errors raised by the sampling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "cholesky factorization failed with jitter {jitter:e} (size {size}, diagonal in [{min_diag:e}, {max_diag:e}], mean {mean_diag:e})"
    )]
    Factorization {
        size: usize,
        jitter: f64,
        min_diag: f64,
        max_diag: f64,
        mean_diag: f64,
    },

    #[error("rank-1 downdate leaves a non positive semi-definite matrix at pivot {index} (residual {residual:e})")]
    DowndateNotPsd { index: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("exhaustive operator norm refused for m = {0} (limit is 20)")]
    TooManyInducingPoints(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
