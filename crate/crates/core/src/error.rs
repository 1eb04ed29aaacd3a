use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("space too large: {n} points exceeds cap {cap}")]
    Size { n: usize, cap: usize },

    #[error("exponential reweighting overflows at index {index} (exponent {exponent})")]
    Range { index: usize, exponent: f64 },

    #[error("{op} is not supported on the {backend} backend")]
    UnsupportedBackend { op: &'static str, backend: &'static str },

    #[error("marginals are unbalanced: |mass(mu) - mass(nu)| = {mismatch:e}")]
    Balance { mismatch: f64 },

    #[error("solver did not converge after {iters} iterations (error {error:e})")]
    Convergence { iters: usize, error: f64 },

    #[error("particle {particle} escaped the domain at {position:?}; enlarge the domain")]
    Escape { particle: usize, position: Vec<f64> },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("CFL condition violated: dt = {dt:e} exceeds admissible {max_dt:e}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
