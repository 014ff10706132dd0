//! Master and worker state machines of the asynchronous distributed ADMM and
//! the transport-agnostic driver loop.
//!
//! The master waits until at least `min_arrivals` reports are pending and no
//! unarrived worker has a delay counter at `τ - 1`, then folds the pending
//! reports into its caches, updates `x_0` and broadcasts only to the workers
//! that arrived. Each worker answers every broadcast with exactly one report.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{augmented_lagrangian, kkt_residuals, KktResiduals};
use crate::error::{check_dim, Error, Result};
use crate::linalg::dist_sq;
use crate::problem::{ConsensusProblem, LocalObjective, Regularizer};
use crate::prox::{dual_update, master_prox, worker_subproblem, FistaConfig, SubproblemResult};
use crate::trace::{IterationRecord, RunParams, Snapshot, StopReason, Trace};
use crate::transport::Transport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub max_iter: usize,
    /// Stop once `F(x_0) ≤ target_objective`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationarity_tol: Option<f64>,
}

impl StoppingRule {
    pub fn iterations(max_iter: usize) -> Self {
        Self {
            max_iter,
            target_objective: None,
            consensus_tol: None,
            stationarity_tol: None,
        }
    }

    fn has_convergence_test(&self) -> bool {
        self.target_objective.is_some()
            || self.consensus_tol.is_some()
            || self.stationarity_tol.is_some()
    }

    /// All configured convergence tests pass. `max_iter` is a separate cap.
    pub fn converged(&self, rec: &IterationRecord) -> bool {
        self.has_convergence_test()
            && self.target_objective.is_none_or(|t| rec.objective <= t)
            && self.consensus_tol.is_none_or(|t| rec.consensus <= t)
            && self.stationarity_tol.is_none_or(|t| rec.stationarity <= t)
    }
}

/// Initial worker duals. All `x_i` and `x_0` start at zero either way.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualInit {
    /// `λ_i^0 = 0`.
    #[default]
    Zero,
    /// `λ_i^0 = -∇f_i(0)`, so the initial pair already satisfies the
    /// worker optimality condition `∇f_i(x_i) + λ_i = 0` that every later
    /// report satisfies. The rate analysis assumes this of every cached pair.
    Stationary,
}

impl DualInit {
    pub fn initial_dual(self, f: &LocalObjective) -> Result<DVector<f64>> {
        let zero = DVector::zeros(f.dim());
        match self {
            DualInit::Zero => Ok(zero),
            DualInit::Stationary => Ok(-f.gradient(&zero)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub rho: f64,
    pub gamma: f64,
    /// Maximum tolerable delay `τ ≥ 1`.
    pub tau: usize,
    /// Minimum arrival count `A`.
    pub min_arrivals: usize,
    pub stop: StoppingRule,
    #[serde(default)]
    pub dual_init: DualInit,
}

impl ProtocolConfig {
    pub fn validate(&self, workers: usize) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        if self.tau < 1 {
            return Err(Error::InvalidConfig("tau must be at least 1".into()));
        }
        if self.min_arrivals < 1 || self.min_arrivals > workers {
            return Err(Error::InvalidConfig(format!(
                "min_arrivals must lie in [1, {workers}], got {}",
                self.min_arrivals
            )));
        }
        if self.stop.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// A worker's `(x_i, λ_i)` update as seen by the master.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub worker: usize,
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    /// The worker's local clock `k_i` after the update.
    pub tag: u64,
}

/// Messages exchanged between the master and workers. The binary framing
/// lives in [`crate::transport::wire`].
#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    /// `x_0` iterate with its index.
    Broadcast {
        x0: DVector<f64>,
        k: u64,
    },
    Report(Report),
    Shutdown,
    /// Connection handshake (TCP only).
    Register {
        worker: usize,
    },
    /// Master-side rejection (TCP only).
    Error {
        code: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterState {
    pub k: usize,
    pub x0: DVector<f64>,
    pub x_cache: Vec<DVector<f64>>,
    pub lambda_cache: Vec<DVector<f64>>,
    pub delays: Vec<usize>,
    pending: Vec<Report>,
    /// Arrival iterations per worker, strictly increasing.
    history: Vec<Vec<usize>>,
}

impl MasterState {
    /// Zero initialization of `x_0`, the cached `x_i` and `λ_i`.
    pub fn new(workers: usize, dim: usize) -> Self {
        Self {
            k: 0,
            x0: DVector::zeros(dim),
            x_cache: vec![DVector::zeros(dim); workers],
            lambda_cache: vec![DVector::zeros(dim); workers],
            delays: vec![0; workers],
            pending: Vec::new(),
            history: vec![Vec::new(); workers],
        }
    }

    pub fn workers(&self) -> usize {
        self.delays.len()
    }

    pub fn pending(&self) -> impl Iterator<Item = usize> + '_ {
        self.pending.iter().map(|r| r.worker)
    }

    pub fn history(&self, worker: usize) -> &[usize] {
        &self.history[worker]
    }

    pub fn last_arrival(&self, worker: usize) -> Option<usize> {
        self.history[worker].last().copied()
    }

    /// Queues a report for the next update.
    pub fn receive(&mut self, report: Report) -> Result<()> {
        let n = self.workers();
        if report.worker >= n {
            return Err(Error::Protocol(format!(
                "report from unknown worker {} (N = {n})",
                report.worker
            )));
        }
        check_dim(self.x0.len(), report.x.len())?;
        check_dim(self.x0.len(), report.lambda.len())?;
        if self.pending.iter().any(|r| r.worker == report.worker) {
            return Err(Error::Protocol(format!(
                "worker {} sent a second report before its first was consumed",
                report.worker
            )));
        }
        let expected = self.history[report.worker].len() as u64 + 1;
        if report.tag != expected {
            return Err(Error::Protocol(format!(
                "worker {} report tag {} out of sequence (expected {expected})",
                report.worker, report.tag
            )));
        }
        self.pending.push(report);
        Ok(())
    }

    /// `|pending| ≥ A` and every worker without a pending report has `d_i < τ - 1`.
    pub fn barrier_ready(&self, cfg: &ProtocolConfig) -> bool {
        if self.pending.len() < cfg.min_arrivals {
            return false;
        }
        let limit = cfg.tau as i64 - 1;
        (0..self.workers())
            .all(|i| self.pending.iter().any(|r| r.worker == i) || (self.delays[i] as i64) < limit)
    }

    /// One master update. Returns the arrival set `A_k`, which is also the
    /// set of broadcast targets for `x_0^{k+1}`.
    pub fn step(&mut self, cfg: &ProtocolConfig, reg: &Regularizer) -> Result<Vec<usize>> {
        if !self.barrier_ready(cfg) {
            return Err(Error::Protocol(format!(
                "master step at k = {} called before the barrier was satisfied",
                self.k
            )));
        }
        let mut reports = std::mem::take(&mut self.pending);
        reports.sort_by_key(|r| r.worker);
        let arrived: Vec<usize> = reports.iter().map(|r| r.worker).collect();

        for d in self.delays.iter_mut() {
            *d += 1;
        }
        for r in reports {
            self.delays[r.worker] = 0;
            self.history[r.worker].push(self.k);
            self.x_cache[r.worker] = r.x;
            self.lambda_cache[r.worker] = r.lambda;
        }

        let n = self.x0.len();
        let mut sum_lambda = DVector::zeros(n);
        let mut sum_x = DVector::zeros(n);
        for i in 0..self.workers() {
            sum_lambda += &self.lambda_cache[i];
            sum_x += &self.x_cache[i];
        }
        self.x0 = master_prox(
            reg,
            &sum_lambda,
            &sum_x,
            &self.x0,
            cfg.rho,
            cfg.gamma,
            self.workers(),
        )?;
        self.k += 1;
        Ok(arrived)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub id: usize,
    /// Number of completed local updates.
    pub k: u64,
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub obj: LocalObjective,
}

impl WorkerState {
    pub fn new(id: usize, obj: LocalObjective) -> Self {
        let n = obj.dim();
        Self {
            id,
            k: 0,
            x: DVector::zeros(n),
            lambda: DVector::zeros(n),
            obj,
        }
    }

    /// Worker with duals initialized per `init`.
    pub fn with_dual_init(id: usize, obj: LocalObjective, init: DualInit) -> Result<Self> {
        let lambda = init.initial_dual(&obj)?;
        Ok(Self {
            lambda,
            ..Self::new(id, obj)
        })
    }

    /// Solves the local subproblem against `x̂_0` (warm-started at the current
    /// `x_i`), takes the dual step and returns the report to send.
    pub fn step(
        &mut self,
        x_hat0: &DVector<f64>,
        rho: f64,
        fista: &FistaConfig,
    ) -> Result<(Report, SubproblemResult)> {
        check_dim(self.x.len(), x_hat0.len())?;
        let sub = worker_subproblem(&self.obj, &self.lambda, x_hat0, rho, fista, &self.x)?;
        if !sub.converged {
            log::warn!(
                "worker {} subproblem stopped at max_inner = {} with gradient norm {:e}",
                self.id,
                sub.inner_iters,
                sub.final_grad_norm
            );
        }
        self.lambda = dual_update(&self.lambda, &sub.x_new, x_hat0, rho)?;
        self.x = sub.x_new.clone();
        self.k += 1;
        let report = Report {
            worker: self.id,
            x: self.x.clone(),
            lambda: self.lambda.clone(),
            tag: self.k,
        };
        Ok((report, sub))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// `F*` used to report `Δ_k`; stored in the trace.
    pub f_star: Option<f64>,
    /// Keep master-side snapshots of `(x_i, λ_i)` after every iteration.
    pub keep_iterates: bool,
}

/// Builds the per-iteration records from the master's bookkeeping.
struct Recorder {
    /// `x_0` index each worker's cache was computed against.
    basis: Vec<Option<usize>>,
    /// `‖x_i^{k̃+1} - x_i^{k̃}‖²` at each worker's last arrival.
    last_move: Vec<Option<f64>>,
}

impl Recorder {
    fn new(workers: usize) -> Self {
        Self {
            basis: vec![None; workers],
            last_move: vec![None; workers],
        }
    }
}

fn record_state(
    p: &ConsensusProblem,
    m: &MasterState,
    cfg: &ProtocolConfig,
) -> Result<(f64, f64, KktResiduals, f64)> {
    let lagrangian = augmented_lagrangian(p, &m.x_cache, &m.x0, &m.lambda_cache, cfg.rho)?;
    let objective = p.objective_value(&m.x0)?;
    let kkt = kkt_residuals(p, &m.x_cache, &m.x0, &m.lambda_cache)?;
    let consensus_err = m.x_cache.iter().map(|x| dist_sq(x, &m.x0)).sum();
    Ok((lagrangian, objective, kkt, consensus_err))
}

/// Drives the master against `transport` until the stopping rule fires, then
/// sends `Shutdown` to every worker. Failures carry the partial trace.
pub fn run_to_completion<T: Transport + ?Sized>(
    p: &ConsensusProblem,
    cfg: &ProtocolConfig,
    transport: &mut T,
    opts: RunOptions,
) -> Result<Trace> {
    cfg.validate(p.workers())?;
    let params = RunParams {
        workers: p.workers(),
        dim: p.dim(),
        rho: cfg.rho,
        gamma: cfg.gamma,
        tau: cfg.tau,
        min_arrivals: cfg.min_arrivals,
    };
    let mut master = MasterState::new(p.workers(), p.dim());
    for (i, f) in p.locals().iter().enumerate() {
        master.lambda_cache[i] = cfg.dual_init.initial_dual(f)?;
    }
    let mut trace = Trace::new(params, master.x0.clone(), transport.time_unit());
    trace.f_star = opts.f_star;
    if opts.keep_iterates {
        trace.iterates = Some(Vec::new());
    }
    match drive(p, cfg, transport, &mut master, &mut trace, opts) {
        Ok(()) => Ok(trace),
        Err(e) => {
            trace.master_clock = transport.master_clock();
            trace.worker_clocks = transport.worker_clocks();
            trace.notes.extend(transport.notes());
            Err(Error::Run {
                source: Box::new(e),
                partial: Box::new(trace),
            })
        }
    }
}

fn drive<T: Transport + ?Sized>(
    p: &ConsensusProblem,
    cfg: &ProtocolConfig,
    transport: &mut T,
    master: &mut MasterState,
    trace: &mut Trace,
    opts: RunOptions,
) -> Result<()> {
    let n_workers = p.workers();
    let reg = p.regularizer();
    let mut rec = Recorder::new(n_workers);

    let (l0, obj0, ..) = record_state(p, master, cfg)?;
    trace.lagrangian0 = l0;
    trace.objective0 = obj0;

    let all: Vec<usize> = (0..n_workers).collect();
    transport.broadcast(&all, &master.x0, 0)?;

    loop {
        loop {
            while let Some(r) = transport.try_recv()? {
                master.receive(r)?;
            }
            if master.barrier_ready(cfg) {
                break;
            }
            let r = transport.recv()?;
            master.receive(r)?;
        }

        let started = Instant::now();
        let k = master.k;
        let delays_before = master.delays.clone();
        let last_arrival: Vec<Option<usize>> =
            (0..n_workers).map(|i| master.last_arrival(i)).collect();
        let x_before = master.x_cache.clone();
        let x0_before = master.x0.clone();

        let arrived = master.step(cfg, &reg)?;

        if let Some(i) = master.delays.iter().position(|&d| d + 1 > cfg.tau) {
            return Err(Error::Protocol(format!(
                "bounded delay broken: worker {i} has d = {} > τ - 1 = {}",
                master.delays[i],
                cfg.tau - 1
            )));
        }

        let mut move_sq = vec![0.0; n_workers];
        let mut prior_move_sq = vec![None; n_workers];
        for &i in &arrived {
            rec.basis[i] = Some(last_arrival[i].map_or(0, |j| j + 1));
            move_sq[i] = dist_sq(&master.x_cache[i], &x_before[i]);
        }
        for (i, prior) in prior_move_sq.iter_mut().enumerate() {
            if !arrived.contains(&i) {
                *prior = rec.last_move[i];
            }
        }
        for &i in &arrived {
            rec.last_move[i] = Some(move_sq[i]);
        }
        let stale_gap_sq = rec
            .basis
            .iter()
            .map(|b| b.map(|j| dist_sq(&x0_before, &trace.x0_history[j])))
            .collect();
        let x0_move_sq = dist_sq(&master.x0, &x0_before);
        trace.x0_history.push(master.x0.clone());

        let (lagrangian, objective, kkt, consensus_err) = record_state(p, master, cfg)?;
        transport.master_computed(started.elapsed())?;
        let clock = transport.master_clock();
        let record = IterationRecord {
            k,
            arrived: arrived.clone(),
            delays_before,
            delays_after: master.delays.clone(),
            last_arrival,
            basis: rec.basis.clone(),
            move_sq,
            prior_move_sq,
            stale_gap_sq,
            x0_move_sq,
            consensus_err,
            lagrangian,
            objective,
            stationarity: kkt.stationarity,
            consensus: kkt.consensus,
            x0_opt: kkt.x0_opt,
            time: transport.now(),
            master_compute: clock.compute,
            master_wait: clock.wait,
        };
        let converged = cfg.stop.converged(&record);
        trace.records.push(record);
        if opts.keep_iterates {
            if let Some(its) = trace.iterates.as_mut() {
                its.push(Snapshot {
                    x: master.x_cache.clone(),
                    lambda: master.lambda_cache.clone(),
                });
            }
        }

        let stop = if converged {
            Some(StopReason::Converged)
        } else if master.k >= cfg.stop.max_iter {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        if let Some(reason) = stop {
            trace.stop = Some(reason);
            trace.discarded_late = transport.shutdown()?;
            if trace.discarded_late > 0 {
                log::info!(
                    "discarded {} report(s) that arrived after stop",
                    trace.discarded_late
                );
            }
            trace.master_clock = transport.master_clock();
            trace.worker_clocks = transport.worker_clocks();
            trace.notes.extend(transport.notes());
            return Ok(());
        }
        transport.broadcast(&arrived, &master.x0, master.k as u64)?;
    }
}
