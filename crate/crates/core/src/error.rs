use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    /// Evaluation of a vector field component failed.
    #[error("{field} component {component}: {source}")]
    Eval {
        field: String,
        component: usize,
        #[source]
        source: EvalError,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("control matrix B is rank deficient (rank {rank} < {m})")]
    RankDeficient { rank: usize, m: usize },

    /// The control distribution drops rank at the queried point.
    #[error("control distribution has corank {corank} at {point:?}")]
    Stratum { corank: usize, point: Vec<f64> },

    #[error("invalid transverse manifold: {0}")]
    InvalidManifold(String),

    #[error("transversality margin {margin:.3e} below tolerance at {point:?}")]
    Transversality { margin: f64, point: Vec<f64> },

    #[error("no valid dependent/independent split: {0}")]
    NoValidSplit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("grid of {required} points exceeds the cap of {cap}")]
    GridTooLarge { required: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Configuration and input problems, as opposed to numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Dimension(_)
                | Error::InvalidSystem(_)
                | Error::InvalidManifold(_)
                | Error::NoValidSplit(_)
                | Error::RankDeficient { .. }
                | Error::Config(_)
                | Error::GridTooLarge { .. }
                | Error::Precondition(_)
        )
    }
}
