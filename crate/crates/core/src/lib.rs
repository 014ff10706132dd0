//! Asynchronous distributed ADMM for consensus optimization over a star
//! network, with a deterministic cluster simulator, a TCP backend, and
//! numerical validators for the linear-rate analysis.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod problem;
pub mod protocol;
pub mod prox;
pub mod trace;
pub mod transport;

pub use error::{Error, Result};
pub use problem::{ConsensusProblem, Family, LocalObjective, ReferenceSolution, Regularizer};
pub use protocol::{
    run_to_completion, DualInit, MasterState, ProtocolConfig, Report, RunOptions, StoppingRule,
    WireMessage, WorkerState,
};
pub use prox::{FistaConfig, Stepsize, SubproblemResult};
pub use trace::{ClockAccount, IterationRecord, RunParams, Snapshot, StopReason, TimeUnit, Trace};
pub use transport::Transport;
