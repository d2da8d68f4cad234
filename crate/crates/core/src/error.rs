use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("stability limit exceeded: dt = {dt:.3e} > bound {bound:.3e}")]
    Stability { dt: f64, bound: f64 },

    #[error("aliasing: band {band} is not resolved by {nodes} nodes per axis")]
    Aliasing { band: usize, nodes: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data at byte offset {offset}: {reason}")]
    Corruption { offset: u64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (max |grad| = {max_grad:.3e})")]
    NonFinite { epoch: usize, batch: usize, max_grad: f64 },

    #[error("generation failed for sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
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
