use thiserror::Error;

use crate::problem::ReferenceSolution;
use crate::trace::Trace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("power iteration did not converge after {iterations} iterations")]
    PowerIteration { iterations: usize },

    #[error("reference solve hit the cap of {iterations} iterations (gradient mapping norm {residual:e})")]
    ReferenceNotConverged {
        iterations: usize,
        residual: f64,
        best: Box<ReferenceSolution>,
    },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("missing history: {0}")]
    MissingHistory(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("frame checksum mismatch: expected {expected:#010x}, computed {computed:#010x}")]
    Checksum { expected: u32, computed: u32 },

    #[error("rejected by master: {0}")]
    Rejected(String),

    #[error("simulator invariant broken: {0}")]
    Simulator(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("run failed after {} iterations: {source}", partial.records.len())]
    Run {
        #[source]
        source: Box<Error>,
        partial: Box<Trace>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(String),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
