use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate basis: smallest Gram eigenvalue {lambda_min:e}")]
    DegenerateBasis { lambda_min: f64 },

    #[error("ill-posed least-squares fit (condition number {condition:e})")]
    IllPosedFit { condition: f64 },

    #[error("infeasible problem: constraint row {row} violated by {violation:e}")]
    Infeasible { row: usize, violation: f64 },

    #[error("solver stalled: {0}")]
    Stall(String),

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn at_trajectory(self, index: usize) -> Self {
        Error::Trajectory {
            index,
            source: Box::new(self),
        }
    }
}
