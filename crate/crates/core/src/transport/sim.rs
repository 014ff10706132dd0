//! Deterministic discrete-event cluster simulator.
//!
//! Workers run in-process; their compute times and link latencies are sampled
//! from per-worker random streams derived from one seed. Events are processed
//! in `(time, sequence)` order, so a run is a pure function of its inputs.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::time::Duration;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ConsensusProblem;
use crate::protocol::{
    run_to_completion, DualInit, ProtocolConfig, Report, RunOptions, WorkerState,
};
use crate::prox::FistaConfig;
use crate::trace::{ClockAccount, TimeUnit, Trace};

use super::Transport;

/// Duration distribution in simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Fixed {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// `exp(N(mu, sigma²))`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
}

impl Distribution {
    pub fn fixed(value: f64) -> Self {
        Distribution::Fixed { value }
    }

    /// Checks parameters; `positive` demands strictly positive samples.
    pub fn validate(&self, what: &str, positive: bool) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("{what}: {msg}")));
        match *self {
            Distribution::Fixed { value } => {
                if !value.is_finite() || value < 0.0 || (positive && value == 0.0) {
                    return bad(format!("fixed duration {value} is not admissible"));
                }
            }
            Distribution::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite()) || low > high || low < 0.0 {
                    return bad(format!("uniform range [{low}, {high}] is not admissible"));
                }
                if positive && low == 0.0 {
                    return bad("uniform lower bound must be positive".into());
                }
            }
            Distribution::LogNormal { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite()) || sigma < 0.0 {
                    return bad(format!(
                        "log-normal parameters ({mu}, {sigma}) are not admissible"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Fixed { value } => value,
            Distribution::Uniform { low, high } => {
                if low == high {
                    low
                } else {
                    rng.random_range(low..high)
                }
            }
            Distribution::LogNormal { mu, sigma } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (mu + sigma * z).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerTiming {
    pub compute: Distribution,
    /// Worker-to-master latency.
    #[serde(default = "zero_latency")]
    pub uplink: Distribution,
    /// Master-to-worker latency.
    #[serde(default = "zero_latency")]
    pub downlink: Distribution,
}

fn zero_latency() -> Distribution {
    Distribution::fixed(0.0)
}

impl WorkerTiming {
    pub fn compute_only(compute: Distribution) -> Self {
        Self {
            compute,
            uplink: Distribution::fixed(0.0),
            downlink: Distribution::fixed(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub workers: Vec<WorkerTiming>,
    pub master_compute: Distribution,
}

impl SimConfig {
    pub fn homogeneous(
        workers: usize,
        seed: u64,
        timing: WorkerTiming,
        master: Distribution,
    ) -> Self {
        Self {
            seed,
            workers: vec![timing; workers],
            master_compute: master,
        }
    }

    pub fn validate(&self, workers: usize) -> Result<()> {
        if self.workers.len() != workers {
            return Err(Error::InvalidConfig(format!(
                "simulator describes {} workers, problem has {workers}",
                self.workers.len()
            )));
        }
        for (i, w) in self.workers.iter().enumerate() {
            w.compute.validate(&format!("worker {i} compute"), true)?;
            w.uplink.validate(&format!("worker {i} uplink"), false)?;
            w.downlink
                .validate(&format!("worker {i} downlink"), false)?;
        }
        self.master_compute.validate("master compute", false)
    }
}

#[derive(Debug, Clone)]
enum EventKind {
    DeliverToMaster(Report),
    DeliverToWorker { worker: usize, x0: DVector<f64> },
    ComputeDone(Report),
}

#[derive(Debug, Clone)]
struct SimEvent {
    time: f64,
    sequence: u64,
    kind: EventKind,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for SimEvent {}
impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.sequence.cmp(&other.sequence))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct WorkerClock {
    done: f64,
    current: Option<(f64, f64)>,
}

impl WorkerClock {
    fn start(&mut self, from: f64, to: f64) {
        if let Some((s, e)) = self.current.take() {
            self.done += e - s;
        }
        self.current = Some((from, to));
    }

    fn compute_until(&self, t: f64) -> f64 {
        self.done + self.current.map_or(0.0, |(s, e)| (e.min(t) - s).max(0.0))
    }
}

/// Simulated cluster implementing [`Transport`].
pub struct SimTransport {
    cfg: SimConfig,
    rho: f64,
    fista: FistaConfig,
    workers: Vec<WorkerState>,
    rngs: Vec<ChaCha8Rng>,
    master_rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<SimEvent>>,
    sequence: u64,
    last_event: f64,
    now: f64,
    inbox: VecDeque<Report>,
    master: ClockAccount,
    clocks: Vec<WorkerClock>,
    unconverged: usize,
    solves: usize,
    log: Vec<(f64, String)>,
    keep_log: bool,
}

impl SimTransport {
    pub fn new(p: &ConsensusProblem, rho: f64, fista: FistaConfig, cfg: SimConfig) -> Result<Self> {
        cfg.validate(p.workers())?;
        let stream = |id: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(id);
            r
        };
        let n = p.workers();
        Ok(Self {
            rngs: (0..n as u64).map(|i| stream(i + 1)).collect(),
            master_rng: stream(0),
            workers: p
                .locals()
                .iter()
                .enumerate()
                .map(|(i, f)| WorkerState::new(i, f.clone()))
                .collect(),
            cfg,
            rho,
            fista,
            queue: BinaryHeap::new(),
            sequence: 0,
            last_event: 0.0,
            now: 0.0,
            inbox: VecDeque::new(),
            master: ClockAccount::default(),
            clocks: vec![WorkerClock::default(); n],
            unconverged: 0,
            solves: 0,
            log: Vec::new(),
            keep_log: false,
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

    /// Records a textual line per processed event (for replay comparisons).
    pub fn with_event_log(mut self) -> Self {
        self.keep_log = true;
        self
    }

    pub fn event_log(&self) -> &[(f64, String)] {
        &self.log
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.queue.push(Reverse(SimEvent {
            time,
            sequence: self.sequence,
            kind,
        }));
        self.sequence += 1;
    }

    fn pop_next(&mut self) -> Result<Option<SimEvent>> {
        let Some(Reverse(ev)) = self.queue.pop() else {
            return Ok(None);
        };
        if ev.time < self.last_event {
            return Err(Error::Simulator(format!(
                "event time went backwards: {} after {}",
                ev.time, self.last_event
            )));
        }
        self.last_event = ev.time;
        Ok(Some(ev))
    }

    /// Processes one event; returns a report when it reached the master.
    fn process(&mut self, ev: SimEvent) -> Result<Option<Report>> {
        match ev.kind {
            EventKind::DeliverToWorker { worker, x0 } => {
                if self.keep_log {
                    self.log
                        .push((ev.time, format!("deliver x0 to worker {worker}")));
                }
                let (report, sub) = self.workers[worker].step(&x0, self.rho, &self.fista)?;
                self.solves += 1;
                if !sub.converged {
                    self.unconverged += 1;
                }
                let dt = self.cfg.workers[worker]
                    .compute
                    .sample(&mut self.rngs[worker]);
                self.clocks[worker].start(ev.time, ev.time + dt);
                self.schedule(ev.time + dt, EventKind::ComputeDone(report));
                Ok(None)
            }
            EventKind::ComputeDone(report) => {
                let i = report.worker;
                if self.keep_log {
                    self.log
                        .push((ev.time, format!("worker {i} done (k_i = {})", report.tag)));
                }
                let lat = self.cfg.workers[i].uplink.sample(&mut self.rngs[i]);
                self.schedule(ev.time + lat, EventKind::DeliverToMaster(report));
                Ok(None)
            }
            EventKind::DeliverToMaster(report) => {
                if self.keep_log {
                    self.log
                        .push((ev.time, format!("report from worker {}", report.worker)));
                }
                Ok(Some(report))
            }
        }
    }

    /// Processes every event with time at most `now`.
    fn catch_up(&mut self) -> Result<()> {
        while self
            .queue
            .peek()
            .is_some_and(|Reverse(ev)| ev.time <= self.now)
        {
            let ev = self.pop_next()?.expect("peeked event exists");
            if let Some(r) = self.process(ev)? {
                self.inbox.push_back(r);
            }
        }
        Ok(())
    }
}

impl Transport for SimTransport {
    fn try_recv(&mut self) -> Result<Option<Report>> {
        self.catch_up()?;
        Ok(self.inbox.pop_front())
    }

    fn recv(&mut self) -> Result<Report> {
        self.catch_up()?;
        if let Some(r) = self.inbox.pop_front() {
            return Ok(r);
        }
        loop {
            let ev = self.pop_next()?.ok_or_else(|| {
                Error::Simulator("master is waiting but no event is scheduled".into())
            })?;
            let t = ev.time;
            if let Some(r) = self.process(ev)? {
                self.master.wait += t - self.now;
                self.now = t;
                return Ok(r);
            }
        }
    }

    fn broadcast(&mut self, targets: &[usize], x0: &DVector<f64>, _k: u64) -> Result<()> {
        for &i in targets {
            let lat = self.cfg.workers[i].downlink.sample(&mut self.rngs[i]);
            self.schedule(
                self.now + lat,
                EventKind::DeliverToWorker {
                    worker: i,
                    x0: x0.clone(),
                },
            );
        }
        Ok(())
    }

    fn master_computed(&mut self, _wall: Duration) -> Result<()> {
        let dt = self.cfg.master_compute.sample(&mut self.master_rng);
        self.master.compute += dt;
        self.now += dt;
        Ok(())
    }

    fn shutdown(&mut self) -> Result<usize> {
        self.catch_up()?;
        let in_flight = self
            .queue
            .iter()
            .filter(|Reverse(ev)| !matches!(ev.kind, EventKind::DeliverToWorker { .. }))
            .count();
        let late = self.inbox.len() + in_flight;
        self.inbox.clear();
        self.queue.clear();
        Ok(late)
    }

    fn now(&self) -> f64 {
        self.now
    }

    fn master_clock(&self) -> ClockAccount {
        self.master
    }

    fn worker_clocks(&self) -> Vec<ClockAccount> {
        self.clocks
            .iter()
            .map(|c| {
                let compute = c.compute_until(self.now);
                ClockAccount {
                    compute,
                    wait: self.now - compute,
                }
            })
            .collect()
    }

    fn time_unit(&self) -> TimeUnit {
        TimeUnit::Simulated
    }

    fn notes(&self) -> Vec<String> {
        let mut notes =
            vec!["worker subproblems warm-start from the previous local iterate".to_string()];
        if self.unconverged > 0 {
            notes.push(format!(
                "{} of {} worker subproblem solves stopped at max_inner before reaching grad_tol",
                self.unconverged, self.solves
            ));
        }
        notes
    }
}

/// Runs the protocol on the simulated cluster.
pub fn sim_run(
    p: &ConsensusProblem,
    cfg: &ProtocolConfig,
    fista: &FistaConfig,
    sim: &SimConfig,
    opts: RunOptions,
) -> Result<Trace> {
    let mut transport =
        SimTransport::new(p, cfg.rho, *fista, sim.clone())?.with_dual_init(cfg.dual_init)?;
    run_to_completion(p, cfg, &mut transport, opts)
}
