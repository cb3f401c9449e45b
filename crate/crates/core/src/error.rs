use thiserror::Error;

use crate::solver::SolverError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("field evaluated at its singular point {0}")]
    SingularPoint(String),

    #[error(transparent)]
    Solver(#[from] SolverError),

    #[error("{method} did not converge in {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_level(self, level: usize) -> Error {
        match self {
            e @ Error::AtLevel { .. } => e,
            e => Error::AtLevel { level, source: Box::new(e) },
        }
    }
}
