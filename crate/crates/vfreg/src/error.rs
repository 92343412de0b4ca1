use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch between combined fields")]
    GridMismatch,
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("invalid degree: {0}")]
    Degree(String),
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("near-singular matrix at node {node} (det = {det:.3e})")]
    Singular { node: usize, det: f64 },
    #[error("support violation: {0}")]
    Support(String),
    #[error("{stage} did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { stage: &'static str, iters: usize, residual: f64 },
    #[error("not a contraction at this amplitude (ratio {ratio:.3})")]
    NotContraction { ratio: f64 },
    #[error("flow failure: {0}")]
    Flow(String),
}

impl Error {
    /// Failures of the numerics as opposed to bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::Singular { .. }
                | Error::NoConvergence { .. }
                | Error::NotContraction { .. }
                | Error::Flow(_)
        )
    }
}
