use thiserror::Error;

/// Errors raised by the linear algebra kernels and the fitters built on them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input")]
    Empty,

    #[error("matrix is not symmetric (defect {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is singular or rank deficient")]
    Singular,

    #[error("iteration diverged at step {0}")]
    Diverged(usize),

    #[error("curvature condition violated: v.h = {0:e}")]
    Curvature(f64),

    #[error("invalid curvature sample {0:e}")]
    InvalidSample(f64),

    #[error("low-rank factor left the group: |det(I + V'U)| = {0:e}")]
    GroupExit(f64),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: &str, expected: usize, got: usize) -> Error {
    Error::Dimension(format!("{what}: expected {expected}, got {got}"))
}
