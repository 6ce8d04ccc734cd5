use std::path::PathBuf;

use thiserror::Error;

use crate::deq::DeqTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A configuration value is outside the supported set.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a precondition (out-of-range values, bad coordinates, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed file contents.
    #[error("parse error in {path} at byte {offset}: {msg}")]
    Parse {
        path: String,
        offset: usize,
        msg: String,
    },

    /// A metric is undefined for the given inputs (e.g. an all-zero ground truth).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A fixed-point iteration produced non-finite values.
    #[error("solver diverged after {} iterations", trace.iterations)]
    Divergence { trace: Box<DeqTrace> },

    /// Training produced a non-finite loss; carries the step's solver traces.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize, traces: Vec<DeqTrace> },

    /// Checkpoint was written by an incompatible model or format version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
