//! `adadmm`: run asynchronous ADMM experiments, certify rate parameters,
//! validate saved traces, and generate data.
//!
//! Exit status: 0 on success, 1 when a run did not converge or a check
//! found violations, 2 on any error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adadmm::analysis::{
    certify, check_consensus_bound, check_descent_lemma, check_envelope,
    check_lagrangian_gap_bound, check_weighted_delay_bound, CertifyInput, CheckReport, DelaySubset,
    GapBoundParams, RateCertificate, Slack,
};
use adadmm::experiment::{
    build_problem, max_deviation, run_experiment, sync_reference, synthetic_logistic, write_csv,
    write_libsvm, BackendConfig, ExperimentConfig, LogisticSpec,
};
use adadmm::transport::tcp_connect_worker;
use adadmm::Trace;
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "adadmm",
    version,
    about = "Asynchronous distributed ADMM for consensus optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config and write its artifacts.
    Run(RunArgs),
    /// Compute the rate certificate (ρ, γ, δ, η) for given problem constants.
    Certify(CertifyArgs),
    /// Validate a saved trace against the rate-analysis inequalities.
    Check(CheckArgs),
    /// Run the synchronous reference recursion, optionally comparing a trace.
    SyncOracle(SyncArgs),
    /// Write a synthetic logistic-regression dataset.
    GenData(GenDataArgs),
    /// Serve one worker of a TCP experiment.
    Worker(WorkerArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    min_arrivals: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Keep per-iteration worker iterates in trace.json.
    #[arg(long)]
    keep_iterates: bool,
}

#[derive(Args)]
struct CertifyArgs {
    /// Take L, σ², N and τ from this experiment config (flags still override).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lipschitz: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Bound `S` on the arrival set size; defaults to N.
    #[arg(long)]
    max_arrivals: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    hoffman: Option<f64>,
    #[arg(long)]
    gamma_floor: Option<f64>,
    /// Penalty to certify instead of the smallest admissible one.
    #[arg(long)]
    rho: Option<f64>,
    /// Also write the certificate JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckKind {
    Envelope,
    Descent,
    Consensus,
    WeightedDelay,
    GapBound,
}

#[derive(Args)]
struct CheckArgs {
    /// `trace.json` written by `run`.
    trace: PathBuf,
    /// `certificate.json`; needed for the envelope and weighted-delay checks.
    #[arg(long)]
    certificate: Option<PathBuf>,
    #[arg(long)]
    lipschitz: f64,
    /// Needed for the gap bound.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    hoffman: Option<f64>,
    /// Checks to run; defaults to every check whose inputs are available.
    #[arg(long, value_enum, value_delimiter = ',')]
    checks: Vec<CheckKind>,
    /// Absolute slack added to every inequality.
    #[arg(long, default_value_t = 1e-9)]
    slack: f64,
    /// Write the reports as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SyncArgs {
    config: PathBuf,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Write the reference iterates as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare against a trace recorded with `--keep-iterates`.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Libsvm,
    Csv,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    label_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Libsvm)]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WorkerArgs {
    config: PathBuf,
    #[arg(long)]
    id: usize,
    /// Master address; defaults to the config's `backend.bind`.
    #[arg(long)]
    connect: Option<String>,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(args: RunArgs) -> anyhow::Result<bool> {
    let mut cfg = load_config(&args.config)?;
    if let Some(dir) = args.out {
        cfg.output.dir = dir;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let proto = &mut cfg.protocol;
    proto.rho = args.rho.unwrap_or(proto.rho);
    proto.gamma = args.gamma.unwrap_or(proto.gamma);
    proto.tau = args.tau.unwrap_or(proto.tau);
    proto.min_arrivals = args.min_arrivals.unwrap_or(proto.min_arrivals);
    cfg.stop.max_iter = args.max_iter.unwrap_or(cfg.stop.max_iter);
    cfg.output.keep_iterates |= args.keep_iterates;
    cfg.validate()?;

    let outcome = run_experiment(&cfg)?;
    let s = &outcome.summary;
    println!(
        "stopped after {} iterations ({}), objective {:.10e}, F* {:.10e}",
        s.iterations,
        match s.stop {
            Some(adadmm::StopReason::Converged) => "converged",
            _ => "iteration cap",
        },
        s.final_objective,
        s.f_star
    );
    println!(
        "stationarity {:.3e}, consensus {:.3e}, elapsed {:.3} {}",
        s.stationarity,
        s.consensus,
        s.elapsed,
        s.time_unit.label()
    );
    for report in &outcome.checks {
        println!("{}", report.summary());
    }
    for e in &s.check_errors {
        println!("check error: {e}");
    }
    for note in &s.notes {
        println!("note: {note}");
    }
    println!("artifacts in {}", outcome.out_dir.display());
    Ok(outcome.success())
}

fn certify_cmd(args: CertifyArgs) -> anyhow::Result<bool> {
    let (mut l, mut s2, mut n, mut tau) = (args.lipschitz, args.sigma2, args.workers, args.tau);
    if let Some(path) = &args.config {
        let cfg = load_config(path)?;
        let p = build_problem(&cfg)?;
        l = l.or(Some(p.lipschitz()));
        s2 = s2.or(Some(p.strong_convexity()));
        n = n.or(Some(p.workers()));
        tau = tau.or(Some(cfg.protocol.tau));
    }
    let (Some(lipschitz), Some(sigma2), Some(workers), Some(tau)) = (l, s2, n, tau) else {
        bail!("need --lipschitz, --sigma2, --workers and --tau (or --config)");
    };
    let cert = certify(&CertifyInput {
        lipschitz,
        sigma2,
        workers,
        max_arrivals: args.max_arrivals.unwrap_or(workers),
        tau,
        gamma_floor: args.gamma_floor,
        hoffman: args.hoffman,
        rho: args.rho,
    })?;
    println!("{}", serde_json::to_string_pretty(&cert)?);
    if let Some(out) = &args.out {
        write_json(out, &cert)?;
    }
    Ok(true)
}

fn check_cmd(args: CheckArgs) -> anyhow::Result<bool> {
    let trace: Trace = read_json(&args.trace)?;
    let cert: Option<RateCertificate> = args.certificate.as_deref().map(read_json).transpose()?;
    let eta = cert.and_then(|c| c.eta);
    let wanted = if args.checks.is_empty() {
        let mut all = vec![CheckKind::Descent, CheckKind::Consensus];
        if cert.is_some() && trace.params.gamma > 0.0 {
            all.push(CheckKind::Envelope);
        }
        if eta.is_some() {
            all.push(CheckKind::WeightedDelay);
        }
        if args.sigma2.is_some() {
            all.push(CheckKind::GapBound);
        }
        all
    } else {
        args.checks.clone()
    };
    let slack = Slack::fixed(args.slack);
    let l = args.lipschitz;
    let mut reports: Vec<CheckReport> = Vec::new();
    for kind in wanted {
        match kind {
            CheckKind::Envelope => {
                let cert = cert
                    .as_ref()
                    .context("the envelope check needs --certificate")?;
                reports.push(check_envelope(&trace, cert, &slack)?);
            }
            CheckKind::Descent => reports.push(check_descent_lemma(&trace, l, &slack)?),
            CheckKind::Consensus => reports.push(check_consensus_bound(&trace, l, &slack)?),
            CheckKind::WeightedDelay => {
                let cert = cert
                    .as_ref()
                    .context("the weighted-delay check needs --certificate")?;
                let eta = eta.context("η is undefined at γ = 0")?;
                let tau = trace.params.tau;
                let n = trace.params.workers;
                let s = cert.input.max_arrivals;
                reports.push(check_weighted_delay_bound(
                    &trace,
                    eta,
                    tau,
                    DelaySubset::Arrived,
                    s,
                    &slack,
                )?);
                reports.push(check_weighted_delay_bound(
                    &trace,
                    eta,
                    2 * tau - 1,
                    DelaySubset::Unarrived,
                    n,
                    &slack,
                )?);
            }
            CheckKind::GapBound => {
                let sigma2 = args.sigma2.context("the gap bound needs --sigma2")?;
                let p = &trace.params;
                let params = GapBoundParams {
                    lipschitz: l,
                    sigma2,
                    delta: GapBoundParams::smallest_delta(
                        p.rho,
                        p.gamma,
                        p.workers,
                        sigma2,
                        args.hoffman,
                    ),
                    hoffman: args.hoffman,
                };
                reports.push(check_lagrangian_gap_bound(&trace, &params, &slack)?);
            }
        }
    }
    for r in &reports {
        println!("{}", r.summary());
        for note in &r.notes {
            println!("  note: {note}");
        }
    }
    if let Some(out) = &args.out {
        write_json(out, &reports)?;
    }
    Ok(reports.iter().all(CheckReport::passed))
}

fn sync_cmd(args: SyncArgs) -> anyhow::Result<bool> {
    let cfg = load_config(&args.config)?;
    let p = build_problem(&cfg)?;
    let reference = sync_reference(&p, cfg.protocol.rho, args.iters, &cfg.fista)?;
    println!(
        "synchronous objective after {} iterations: {:.12e}, consensus error {:.3e}",
        args.iters,
        reference.objective.last().copied().unwrap_or(f64::NAN),
        reference.consensus_err.last().copied().unwrap_or(f64::NAN)
    );
    if let Some(out) = &args.out {
        write_json(out, &reference)?;
    }
    if let Some(path) = &args.compare {
        let trace: Trace = read_json(path)?;
        let dev = max_deviation(&trace, &reference)?;
        println!(
            "max per-iterate deviation {dev:e} (tolerance {:e})",
            args.tol
        );
        return Ok(dev <= args.tol);
    }
    Ok(true)
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<bool> {
    let spec = LogisticSpec {
        samples: args.samples,
        dim: args.dim,
        label_noise: args.label_noise,
    };
    let data = synthetic_logistic(&spec, args.seed)?;
    match args.format {
        Format::Libsvm => write_libsvm(&args.out, &data)?,
        Format::Csv => write_csv(&args.out, &data)?,
    }
    println!(
        "wrote {} samples × {} features to {}",
        data.rows(),
        data.dim(),
        args.out.display()
    );
    Ok(true)
}

fn worker(args: WorkerArgs) -> anyhow::Result<bool> {
    let cfg = load_config(&args.config)?;
    let addr = match (&args.connect, &cfg.backend) {
        (Some(a), _) => a.clone(),
        (None, BackendConfig::Tcp { bind, .. }) => bind.clone(),
        (None, _) => bail!("the config has no TCP backend; pass --connect"),
    };
    let p = build_problem(&cfg)?;
    if args.id >= p.workers() {
        bail!("worker id {} out of range (N = {})", args.id, p.workers());
    }
    let summary = tcp_connect_worker(
        addr.as_str(),
        args.id,
        p.local(args.id).clone(),
        cfg.protocol.rho,
        cfg.fista,
        cfg.protocol.dual_init,
    )?;
    println!(
        "worker {} finished: {} updates, compute {:.3} s, wait {:.3} s",
        summary.id, summary.updates, summary.clock.compute, summary.clock.wait
    );
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Check(a) => check_cmd(a),
        Command::SyncOracle(a) => sync_cmd(a),
        Command::GenData(a) => gen_data(a),
        Command::Worker(a) => worker(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
