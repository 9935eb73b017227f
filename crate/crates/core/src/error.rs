//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum CoreError {
    /// A text input file could not be parsed.
    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    /// A node id referenced something outside the graph.
    #[error("node id {id} out of bounds for graph with {num_nodes} nodes")]
    Bounds { id: usize, num_nodes: usize },

    /// Matrix or vector dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violated a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numeric computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A gradient became non-finite for a named parameter.
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },

    /// Training hit a non-finite loss. Carries the serialized last good
    /// checkpoint, if at least one epoch completed.
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        last_good_checkpoint: Option<Vec<u8>>,
    },

    /// An internal usage contract was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The simplex oracle failed to reach stationarity.
    #[error("metric oracle did not converge within {iterations} iterations (residual {residual:.3e})")]
    OracleFailure { iterations: usize, residual: f64 },

    /// The training split for the linear probe contains a single class.
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    /// An operation that needs ground-truth labels ran on an unlabeled
    /// dataset.
    #[error("labels required: {0}")]
    MissingLabels(String),

    /// A checkpoint file is malformed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
