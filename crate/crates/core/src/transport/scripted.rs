//! Transport that releases worker reports according to a fixed arrival
//! schedule. Used to drive adversarial delay patterns without a timing model.

use std::time::Duration;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::ConsensusProblem;
use crate::protocol::{DualInit, Report, WorkerState};
use crate::prox::FistaConfig;
use crate::trace::{ClockAccount, TimeUnit};

use super::Transport;

/// Batch `k` holds the workers `i` with `i mod τ = k mod τ`, so each worker
/// arrives exactly every `τ` iterations and its delay counter reaches `τ - 1`.
pub fn round_robin(workers: usize, tau: usize) -> Result<Vec<Vec<usize>>> {
    if tau == 0 || tau > workers {
        return Err(Error::InvalidConfig(format!(
            "round-robin schedule needs 1 ≤ τ ≤ N, got τ = {tau}, N = {workers}"
        )));
    }
    Ok((0..tau)
        .map(|k| (0..workers).filter(|i| i % tau == k).collect())
        .collect())
}

/// Workers answer a broadcast immediately; the master sees report `i` only
/// during an iteration whose scheduled batch contains `i`. The schedule is
/// cycled.
pub struct ScriptedTransport {
    schedule: Vec<Vec<usize>>,
    rho: f64,
    fista: FistaConfig,
    workers: Vec<WorkerState>,
    ready: Vec<Option<Report>>,
    iteration: usize,
}

impl ScriptedTransport {
    pub fn new(
        p: &ConsensusProblem,
        rho: f64,
        fista: FistaConfig,
        schedule: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::InvalidConfig("arrival schedule is empty".into()));
        }
        if let Some(&i) = schedule.iter().flatten().find(|&&i| i >= p.workers()) {
            return Err(Error::InvalidConfig(format!(
                "schedule names unknown worker {i}"
            )));
        }
        Ok(Self {
            schedule,
            rho,
            fista,
            workers: p
                .locals()
                .iter()
                .enumerate()
                .map(|(i, f)| WorkerState::new(i, f.clone()))
                .collect(),
            ready: vec![None; p.workers()],
            iteration: 0,
        })
    }

    /// Re-initializes every worker's dual per `init`; must match the
    /// protocol's `dual_init`.
    pub fn with_dual_init(mut self, init: DualInit) -> Result<Self> {
        for w in &mut self.workers {
            w.lambda = init.initial_dual(&w.obj)?;
        }
        Ok(self)
    }

    fn batch(&self) -> &[usize] {
        &self.schedule[self.iteration % self.schedule.len()]
    }
}

impl Transport for ScriptedTransport {
    fn try_recv(&mut self) -> Result<Option<Report>> {
        let idx = self.iteration % self.schedule.len();
        for &i in &self.schedule[idx] {
            if let Some(r) = self.ready[i].take() {
                return Ok(Some(r));
            }
        }
        Ok(None)
    }

    fn recv(&mut self) -> Result<Report> {
        match self.try_recv()? {
            Some(r) => Ok(r),
            None => Err(Error::Transport(format!(
                "scripted batch {:?} at iteration {} cannot satisfy the barrier",
                self.batch(),
                self.iteration
            ))),
        }
    }

    fn broadcast(&mut self, targets: &[usize], x0: &DVector<f64>, _k: u64) -> Result<()> {
        for &i in targets {
            let (report, _) = self.workers[i].step(x0, self.rho, &self.fista)?;
            self.ready[i] = Some(report);
        }
        Ok(())
    }

    fn master_computed(&mut self, _wall: Duration) -> Result<()> {
        self.iteration += 1;
        Ok(())
    }

    fn shutdown(&mut self) -> Result<usize> {
        Ok(self.ready.iter_mut().filter_map(Option::take).count())
    }

    fn now(&self) -> f64 {
        0.0
    }

    fn master_clock(&self) -> ClockAccount {
        ClockAccount::default()
    }

    fn worker_clocks(&self) -> Vec<ClockAccount> {
        vec![ClockAccount::default(); self.workers.len()]
    }

    fn time_unit(&self) -> TimeUnit {
        TimeUnit::None
    }
}
