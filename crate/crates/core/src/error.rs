use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("graph disconnected after {0} retries")]
    Disconnected(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("eigenvalue iteration did not converge after {0} sweeps")]
    EigenNoConvergence(usize),

    #[error("singular statistics matrix (reciprocal condition {0:.3e})")]
    SingularStatistics(f64),

    #[error("parameter left the domain: {0}")]
    DomainExit(String),

    #[error("did not converge after {iters} iterations (last residual {residual:.3e})")]
    NotConverged { iters: usize, residual: f64 },

    #[error("iteration diverged at step {0}")]
    Diverged(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
