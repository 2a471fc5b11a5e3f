use thiserror::Error;

use crate::model::ConstraintReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A natural parameter or observed value outside the domain of its family.
    #[error("domain error: {0}")]
    Domain(String),

    /// The conditional likelihood is undefined at this observation.
    #[error("evaluation error at observation {observation}, variate {variate}: {reason}")]
    Evaluation {
        observation: usize,
        variate: usize,
        reason: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter matrix: {0}")]
    Validation(String),

    #[error("block {block}: Newton system is singular even after jitter")]
    SingularBlock { block: usize },

    #[error("divergence at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("step multiplier grew to {alpha:e} at iteration {iteration} without reducing the gradient norm")]
    Stalled { iteration: usize, alpha: f64 },

    #[error("sampling error at sweep {sweep}, variate {variate}: {reason}")]
    Sampling {
        sweep: usize,
        variate: usize,
        reason: String,
    },

    #[error("parameter matrix violates well-definedness constraints ({} violation(s))", .0.violations.len())]
    Constraints(ConstraintReport),

    #[error("cross-validation fit failed at lambda = {lambda:e}, fold {fold}: {source}")]
    Fold {
        lambda: f64,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("node-wise fit failed at node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
