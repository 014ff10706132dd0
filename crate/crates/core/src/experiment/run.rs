//! End-to-end experiment: build the problem, solve the reference, run the
//! protocol on the configured backend, validate the trace and write artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    certify, check_consensus_bound, check_descent_lemma, check_envelope,
    check_lagrangian_gap_bound, check_weighted_delay_bound, CertifyInput, CheckReport, DelaySubset,
    GapBoundParams, RateCertificate, Slack,
};
use crate::error::{Error, Result};
use crate::problem::{ConsensusProblem, Family, LocalObjective, ReferenceSolution};
use crate::protocol::{ProtocolConfig, RunOptions, StoppingRule};
use crate::trace::{ClockAccount, StopReason, TimeUnit, Trace};
use crate::transport::{sim_run, tcp_loopback_run, tcp_serve_master};

use super::config::{BackendConfig, DataFormat, ExperimentConfig, ProblemSource};
use super::data::{parse_csv, parse_libsvm, partition_uniform, Dataset};
use super::synthetic::{synthetic_logistic, synthetic_quadratic, LogisticSpec, QuadraticSpec};
use super::trace_csv::write_trace_csv;

fn logistic_locals(data: &Dataset, workers: usize, seed: u64) -> Result<Vec<LocalObjective>> {
    partition_uniform(data, workers, seed)?
        .into_iter()
        .map(|s| LocalObjective::logistic(s.features, s.labels))
        .collect()
}

/// Builds the consensus problem described by `cfg`. Deterministic in the seed,
/// so separate worker processes reconstruct identical shards.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<ConsensusProblem> {
    let locals = match &cfg.problem {
        ProblemSource::SyntheticQuadratic {
            workers,
            dim,
            eig_min,
            eig_max,
        } => synthetic_quadratic(
            &QuadraticSpec {
                workers: *workers,
                dim: *dim,
                eig_min: *eig_min,
                eig_max: *eig_max,
            },
            cfg.seed,
        )?,
        ProblemSource::SyntheticLogistic {
            workers,
            samples,
            dim,
            label_noise,
        } => {
            let data = synthetic_logistic(
                &LogisticSpec {
                    samples: *samples,
                    dim: *dim,
                    label_noise: *label_noise,
                },
                cfg.seed,
            )?;
            logistic_locals(&data, *workers, cfg.seed)?
        }
        ProblemSource::Dataset {
            workers,
            path,
            format,
            dim,
        } => {
            let data = match format {
                DataFormat::Libsvm => parse_libsvm(path, *dim)?,
                DataFormat::Csv => parse_csv(path)?,
            };
            logistic_locals(&data, *workers, cfg.seed)?
        }
    };
    ConsensusProblem::new(locals, cfg.regularizer)
}

fn exact_solves(p: &ConsensusProblem) -> bool {
    p.locals()
        .iter()
        .all(|f| matches!(f.family, Family::Quadratic { .. }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stop: Option<StopReason>,
    pub iterations: usize,
    pub final_objective: f64,
    pub f_star: f64,
    pub reference_residual: f64,
    pub target_objective: Option<f64>,
    pub iterations_to_target: Option<usize>,
    pub stationarity: f64,
    pub consensus: f64,
    pub x0_opt: f64,
    pub time_unit: TimeUnit,
    pub elapsed: f64,
    pub master_clock: ClockAccount,
    pub worker_clocks: Vec<ClockAccount>,
    pub discarded_late: usize,
    pub converged: bool,
    pub checks_passed: bool,
    pub check_errors: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub trace: Trace,
    pub reference: ReferenceSolution,
    pub certificate: Option<RateCertificate>,
    pub checks: Vec<CheckReport>,
    pub summary: RunSummary,
    pub out_dir: PathBuf,
}

impl ExperimentOutcome {
    /// Converged and every requested check passed.
    pub fn success(&self) -> bool {
        self.summary.converged && self.summary.checks_passed
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Reference optimum; a capped solve still yields a usable value, noted.
fn reference(p: &ConsensusProblem, tol: f64, notes: &mut Vec<String>) -> Result<ReferenceSolution> {
    match p.solve_reference(tol) {
        Ok(r) => Ok(r),
        Err(Error::ReferenceNotConverged {
            iterations,
            residual,
            best,
        }) => {
            notes.push(format!(
                "reference solve stopped after {iterations} iterations with residual {residual:e}; F* is approximate"
            ));
            Ok(*best)
        }
        Err(e) => Err(e),
    }
}

fn stopping_rule(cfg: &ExperimentConfig, f_star: f64) -> StoppingRule {
    let s = &cfg.stop;
    StoppingRule {
        max_iter: s.max_iter,
        target_objective: s.target_objective.or(s
            .target_relative_gap
            .map(|g| f_star + g * f_star.abs().max(1.0))),
        consensus_tol: s.consensus_tol,
        stationarity_tol: s.stationarity_tol,
    }
}

fn execute(
    cfg: &ExperimentConfig,
    p: &ConsensusProblem,
    pc: &ProtocolConfig,
    opts: RunOptions,
) -> Result<Trace> {
    match &cfg.backend {
        BackendConfig::Sim { .. } => {
            let sim = cfg
                .backend
                .sim_config(p.workers(), cfg.seed)?
                .expect("sim backend has a simulator config");
            sim_run(p, pc, &cfg.fista, &sim, opts)
        }
        BackendConfig::Tcp {
            bind: _,
            local_workers: true,
        } => tcp_loopback_run(p, pc, &cfg.fista, opts).map(|(t, _)| t),
        BackendConfig::Tcp {
            bind,
            local_workers: false,
        } => tcp_serve_master(p, pc, bind.as_str(), opts),
    }
}

/// Runs the experiment and writes `trace.csv`, `trace.json`,
/// `certificate.json` (when certifiable), `checks.json` and `summary.json`
/// into the output directory. A failing run leaves the partial trace and a
/// `run.log` with the cause.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out)?;
    let result = run_inner(cfg, &out);
    if let Err(e) = &result {
        let mut log = format!("run failed: {e}\n");
        if let Error::Run { source, partial } = e {
            log.push_str(&format!(
                "cause: {source}\npartial trace: {} iterations\n",
                partial.iterations()
            ));
            let _ = write_trace_csv(&out.join("trace.csv"), partial);
            let _ = write_json(&out.join("trace.json"), partial);
        }
        let _ = fs::write(out.join("run.log"), log);
    }
    result
}

fn run_inner(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    let p = build_problem(cfg)?;
    let mut notes = Vec::new();
    let reference = reference(&p, cfg.reference_tol, &mut notes)?;
    let stop = stopping_rule(cfg, reference.f_star);
    let pc = ProtocolConfig {
        rho: cfg.protocol.rho,
        gamma: cfg.protocol.gamma,
        tau: cfg.protocol.tau,
        min_arrivals: cfg.protocol.min_arrivals,
        stop,
        dual_init: cfg.protocol.dual_init,
    };
    let opts = RunOptions {
        f_star: Some(reference.f_star),
        keep_iterates: cfg.output.keep_iterates,
    };
    let trace = execute(cfg, &p, &pc, opts)?;
    write_trace_csv(&out.join("trace.csv"), &trace)?;
    write_json(&out.join("trace.json"), &trace)?;

    let (certificate, checks, check_errors) = run_checks(cfg, &p, &trace, &mut notes);
    if let Some(c) = &certificate {
        write_json(&out.join("certificate.json"), c)?;
    }
    write_json(&out.join("checks.json"), &checks)?;

    let last = trace.records.last();
    let converged = trace.stop == Some(StopReason::Converged);
    let checks_passed = check_errors.is_empty() && checks.iter().all(CheckReport::passed);
    notes.extend(trace.notes.iter().cloned());
    let summary = RunSummary {
        stop: trace.stop,
        iterations: trace.iterations(),
        final_objective: trace.final_objective(),
        f_star: reference.f_star,
        reference_residual: reference.residual,
        target_objective: stop.target_objective,
        iterations_to_target: stop
            .target_objective
            .and_then(|t| trace.iterations_to_target(t)),
        stationarity: last.map_or(f64::NAN, |r| r.stationarity),
        consensus: last.map_or(f64::NAN, |r| r.consensus),
        x0_opt: last.map_or(f64::NAN, |r| r.x0_opt),
        time_unit: trace.time_unit,
        elapsed: last.map_or(0.0, |r| r.time),
        master_clock: trace.master_clock,
        worker_clocks: trace.worker_clocks.clone(),
        discarded_late: trace.discarded_late,
        converged,
        checks_passed,
        check_errors,
        notes,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(ExperimentOutcome {
        trace,
        reference,
        certificate,
        checks,
        summary,
        out_dir: out.to_path_buf(),
    })
}

/// Certificate for the run's own `(ρ, γ)` when the problem constants allow
/// one; `None` otherwise (with a note).
fn run_certificate(
    cfg: &ExperimentConfig,
    p: &ConsensusProblem,
    trace: &Trace,
    notes: &mut Vec<String>,
) -> Option<RateCertificate> {
    let c = &cfg.checks;
    let n = p.workers();
    let input = CertifyInput {
        lipschitz: c.lipschitz.unwrap_or_else(|| p.lipschitz()),
        sigma2: c.sigma2.unwrap_or_else(|| p.strong_convexity()),
        workers: n,
        max_arrivals: c.max_arrivals.unwrap_or((trace.max_arrivals() + 1).min(n)),
        tau: cfg.protocol.tau,
        gamma_floor: Some(cfg.protocol.gamma),
        hoffman: c.hoffman,
        rho: None,
    };
    let thresholds = match certify(&input) {
        Ok(t) => t,
        Err(e) => {
            notes.push(format!("no rate certificate: {e}"));
            return None;
        }
    };
    if cfg.protocol.rho >= thresholds.rho_min {
        let with_rho = CertifyInput {
            rho: Some(cfg.protocol.rho),
            ..input
        };
        certify(&with_rho).ok()
    } else {
        notes.push(format!(
            "ρ = {} is below the certified threshold ρ_min = {}; the linear-rate guarantee does not apply",
            cfg.protocol.rho, thresholds.rho_min
        ));
        Some(thresholds)
    }
}

fn run_checks(
    cfg: &ExperimentConfig,
    p: &ConsensusProblem,
    trace: &Trace,
    notes: &mut Vec<String>,
) -> (Option<RateCertificate>, Vec<CheckReport>, Vec<String>) {
    let c = &cfg.checks;
    let certificate = run_certificate(cfg, p, trace, notes);
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    if !c.any() {
        return (certificate, reports, errors);
    }
    let slack = match c.slack {
        Some(v) => Slack::fixed(v),
        None if exact_solves(p) => Slack::exact(),
        None => Slack::from_grad_tol(cfg.fista.grad_tol),
    };
    let lipschitz = c.lipschitz.unwrap_or_else(|| p.lipschitz());
    let sigma2 = c.sigma2.unwrap_or_else(|| p.strong_convexity());
    let gamma = cfg.protocol.gamma;
    let mut record = |name: &str, r: Result<CheckReport>| match r {
        Ok(rep) => reports.push(rep),
        Err(e) => errors.push(format!("{name}: {e}")),
    };

    if c.envelope {
        if gamma > 0.0 {
            match &certificate {
                Some(cert) => record("envelope", check_envelope(trace, cert, &slack)),
                None => record(
                    "envelope",
                    Err(Error::Precondition("no rate certificate available".into())),
                ),
            }
        } else {
            notes.push("γ = 0: the envelope is checked through the γ = 0 gap bound".into());
        }
    }
    if c.gap_bound || (c.envelope && gamma == 0.0) {
        let params = GapBoundParams {
            lipschitz,
            sigma2,
            delta: GapBoundParams::smallest_delta(
                cfg.protocol.rho,
                gamma,
                p.workers(),
                sigma2,
                c.hoffman,
            ),
            hoffman: c.hoffman,
        };
        record(
            "gap_bound",
            check_lagrangian_gap_bound(trace, &params, &slack),
        );
    }
    if c.descent {
        record("descent", check_descent_lemma(trace, lipschitz, &slack));
    }
    if c.consensus {
        record("consensus", check_consensus_bound(trace, lipschitz, &slack));
    }
    if c.weighted_delay {
        match certificate
            .as_ref()
            .and_then(|cert| cert.eta.map(|eta| (cert, eta)))
        {
            Some((cert, eta)) => {
                let tau = cfg.protocol.tau;
                record(
                    "weighted_delay",
                    check_weighted_delay_bound(
                        trace,
                        eta,
                        tau,
                        DelaySubset::Arrived,
                        cert.input.max_arrivals,
                        &slack,
                    ),
                );
                record(
                    "weighted_delay",
                    check_weighted_delay_bound(
                        trace,
                        eta,
                        2 * tau - 1,
                        DelaySubset::Unarrived,
                        p.workers(),
                        &slack,
                    ),
                );
            }
            None => record(
                "weighted_delay",
                Err(Error::Precondition(
                    "η is unavailable (γ = 0 or no certificate)".into(),
                )),
            ),
        }
    }
    (certificate, reports, errors)
}
