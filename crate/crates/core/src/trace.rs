//! Per-iteration telemetry produced by a run and consumed by the analysis checks.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    /// Seconds of simulated time from the discrete-event simulator.
    Simulated,
    /// Wall-clock seconds.
    Wall,
    /// No timing model (scripted schedules, synchronous oracle).
    None,
}

impl TimeUnit {
    pub fn label(self) -> &'static str {
        match self {
            TimeUnit::Simulated => "simulated_seconds",
            TimeUnit::Wall => "wall_seconds",
            TimeUnit::None => "none",
        }
    }
}

/// Busy/idle split for one actor. `compute + wait` equals the actor's elapsed time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClockAccount {
    pub compute: f64,
    pub wait: f64,
}

impl ClockAccount {
    pub fn total(&self) -> f64 {
        self.compute + self.wait
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

/// Master-side snapshot of the cached worker variables after an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub x: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
}

/// Telemetry for master iteration `k`, i.e. the transition from state `k` to `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Arrival set `A_k`, ascending.
    pub arrived: Vec<usize>,
    /// Delay counters at the top of the iteration.
    pub delays_before: Vec<usize>,
    pub delays_after: Vec<usize>,
    /// Last iteration before `k` in which each worker arrived.
    pub last_arrival: Vec<Option<usize>>,
    /// Index of the `x_0` iterate each worker's cached `x_i^{k+1}` was computed
    /// against; `None` while the cache still holds the initialization.
    pub basis: Vec<Option<usize>>,
    /// `‖x_i^{k+1} - x_i^k‖²` (zero for unarrived workers).
    pub move_sq: Vec<f64>,
    /// For unarrived workers: `‖x_i^{k̃+1} - x_i^{k̃}‖²` from their last arrival.
    pub prior_move_sq: Vec<Option<f64>>,
    /// `‖x_0^k - x_0^{basis_i}‖²`.
    pub stale_gap_sq: Vec<Option<f64>>,
    /// `‖x_0^{k+1} - x_0^k‖²`.
    pub x0_move_sq: f64,
    /// `Σ_i ‖x_i^{k+1} - x_0^{k+1}‖²`.
    pub consensus_err: f64,
    /// Augmented Lagrangian at state `k + 1`.
    pub lagrangian: f64,
    /// `Σ f_i(x_0^{k+1}) + h(x_0^{k+1})`.
    pub objective: f64,
    /// `max_i ‖∇f_i(x_i) + λ_i‖` at state `k + 1`.
    pub stationarity: f64,
    /// `max_i ‖x_i - x_0‖` at state `k + 1`.
    pub consensus: f64,
    /// Distance of `Σ λ_i` to `∂h(x_0)` at state `k + 1`.
    pub x0_opt: f64,
    /// Time at the end of the master update.
    pub time: f64,
    pub master_compute: f64,
    pub master_wait: f64,
}

impl IterationRecord {
    /// True once every worker's cached pair came from a solve against a
    /// broadcast iterate, so that `∇f_i(x_i) + λ_i = 0` held before the update.
    pub fn past_warmup(&self) -> bool {
        self.basis.iter().all(|b| matches!(b, Some(j) if *j >= 1))
            && self.arrived.iter().all(|&i| self.last_arrival[i].is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub workers: usize,
    pub dim: usize,
    pub rho: f64,
    pub gamma: f64,
    pub tau: usize,
    pub min_arrivals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub params: RunParams,
    pub f_star: Option<f64>,
    /// Augmented Lagrangian and objective at the initial state.
    pub lagrangian0: f64,
    pub objective0: f64,
    pub records: Vec<IterationRecord>,
    /// `x_0^0, …, x_0^K`.
    pub x0_history: Vec<DVector<f64>>,
    /// Cached worker variables after each iteration, when requested.
    pub iterates: Option<Vec<Snapshot>>,
    pub time_unit: TimeUnit,
    pub master_clock: ClockAccount,
    pub worker_clocks: Vec<ClockAccount>,
    pub stop: Option<StopReason>,
    /// Reports that reached the master after the stop decision.
    pub discarded_late: usize,
    /// Free-form run notes (e.g. warm-start policy).
    pub notes: Vec<String>,
}

impl Trace {
    pub fn new(params: RunParams, x0: DVector<f64>, time_unit: TimeUnit) -> Self {
        let workers = params.workers;
        Self {
            params,
            f_star: None,
            lagrangian0: f64::NAN,
            objective0: f64::NAN,
            records: Vec::new(),
            x0_history: vec![x0],
            iterates: None,
            time_unit,
            master_clock: ClockAccount::default(),
            worker_clocks: vec![ClockAccount::default(); workers],
            stop: None,
            discarded_late: 0,
            notes: Vec::new(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// `Δ_0, …, Δ_K` with `Δ_k = L_ρ(state k) - F*`.
    pub fn deltas(&self) -> Result<Vec<f64>> {
        let f_star = self
            .f_star
            .ok_or_else(|| Error::Precondition("trace carries no F* reference value".into()))?;
        let mut out = Vec::with_capacity(self.records.len() + 1);
        out.push(self.lagrangian0 - f_star);
        out.extend(self.records.iter().map(|r| r.lagrangian - f_star));
        Ok(out)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.objective0, |r| r.objective)
    }

    pub fn final_x0(&self) -> &DVector<f64> {
        self.x0_history.last().expect("x0 history is never empty")
    }

    /// First iteration count at which the objective reached `target`.
    pub fn iterations_to_target(&self, target: f64) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.objective <= target)
            .map(|p| p + 1)
    }

    /// Largest `|A_k|` over the run.
    pub fn max_arrivals(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.arrived.len())
            .max()
            .unwrap_or(0)
    }
}
