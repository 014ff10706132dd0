//! Message fabrics connecting the master to its workers.
//!
//! The master loop in [`crate::protocol::run_to_completion`] is written against
//! [`Transport`]; the backends decide when reports become visible and how time
//! is accounted.

pub mod scripted;
pub mod sim;
pub mod tcp;
pub mod wire;

use std::time::Duration;

use nalgebra::DVector;

use crate::error::Result;
use crate::protocol::Report;
use crate::trace::{ClockAccount, TimeUnit};

pub use scripted::{round_robin, ScriptedTransport};
pub use sim::{sim_run, Distribution, SimConfig, SimTransport, WorkerTiming};
pub use tcp::{tcp_connect_worker, tcp_loopback_run, tcp_serve_master, TcpMaster, WorkerSummary};

/// Master-side view of a message fabric.
pub trait Transport {
    /// A report that has already reached the master, if any. Never blocks.
    fn try_recv(&mut self) -> Result<Option<Report>>;

    /// Blocks until the next report reaches the master. Time spent here is
    /// accounted as master waiting time.
    fn recv(&mut self) -> Result<Report>;

    /// Sends `x0` (the iterate with index `k`) to each worker in `targets`.
    fn broadcast(&mut self, targets: &[usize], x0: &DVector<f64>, k: u64) -> Result<()>;

    /// Marks the end of one master update. `wall` is the measured wall time
    /// of the update; simulated backends substitute their own cost model.
    fn master_computed(&mut self, wall: Duration) -> Result<()>;

    /// Sends `Shutdown` to every worker and returns the number of reports
    /// that were still in flight or unconsumed.
    fn shutdown(&mut self) -> Result<usize>;

    /// Elapsed time since the start of the run.
    fn now(&self) -> f64;

    fn master_clock(&self) -> ClockAccount;

    fn worker_clocks(&self) -> Vec<ClockAccount>;

    fn time_unit(&self) -> TimeUnit;

    /// Diagnostics worth recording in the trace (e.g. unconverged solves).
    fn notes(&self) -> Vec<String> {
        Vec::new()
    }
}
