//! TOML experiment configuration.
//!
//! ```toml
//! seed = 7
//!
//! [problem]
//! kind = "synthetic_logistic"      # or "synthetic_quadratic", "dataset"
//! workers = 10
//! samples = 2000
//! dim = 50
//!
//! [regularizer]
//! kind = "box"
//! bound = 10.0
//!
//! [protocol]
//! rho = 0.01
//! gamma = 0.0
//! tau = 5
//! min_arrivals = 1
//!
//! [stop]
//! max_iter = 2000
//! target_relative_gap = 1e-4
//!
//! [backend]
//! kind = "sim"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Regularizer;
use crate::protocol::DualInit;
use crate::prox::FistaConfig;
use crate::transport::sim::{Distribution, SimConfig, WorkerTiming};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSource {
    SyntheticQuadratic {
        workers: usize,
        dim: usize,
        #[serde(default = "one")]
        eig_min: f64,
        #[serde(default = "five")]
        eig_max: f64,
    },
    SyntheticLogistic {
        workers: usize,
        samples: usize,
        dim: usize,
        #[serde(default = "noise")]
        label_noise: f64,
    },
    Dataset {
        workers: usize,
        path: PathBuf,
        format: DataFormat,
        /// Feature count; inferred from the file when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
}

fn one() -> f64 {
    1.0
}
fn five() -> f64 {
    5.0
}
fn noise() -> f64 {
    0.1
}

impl ProblemSource {
    pub fn workers(&self) -> usize {
        match self {
            ProblemSource::SyntheticQuadratic { workers, .. }
            | ProblemSource::SyntheticLogistic { workers, .. }
            | ProblemSource::Dataset { workers, .. } => *workers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSection {
    pub rho: f64,
    #[serde(default)]
    pub gamma: f64,
    pub tau: usize,
    pub min_arrivals: usize,
    #[serde(default)]
    pub dual_init: DualInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopSection {
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_objective: Option<f64>,
    /// Target `F* + gap · max(|F*|, 1)`; needs the reference solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_relative_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationarity_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Sim {
        /// Timing applied to every worker not listed in `workers`.
        #[serde(default = "default_timing")]
        timing: WorkerTiming,
        /// Per-worker timings (length N) overriding `timing`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        workers: Option<Vec<WorkerTiming>>,
        #[serde(default = "zero_duration")]
        master_compute: Distribution,
        /// Simulator seed; defaults to the experiment seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Tcp {
        bind: String,
        /// Run the workers as threads of this process over loopback.
        #[serde(default)]
        local_workers: bool,
    },
}

fn default_timing() -> WorkerTiming {
    WorkerTiming::compute_only(Distribution::fixed(1.0))
}
fn zero_duration() -> Distribution {
    Distribution::fixed(0.0)
}

impl BackendConfig {
    pub fn sim_config(&self, workers: usize, default_seed: u64) -> Result<Option<SimConfig>> {
        match self {
            BackendConfig::Sim {
                timing,
                workers: list,
                master_compute,
                seed,
            } => {
                let timings = match list {
                    Some(l) => l.clone(),
                    None => vec![*timing; workers],
                };
                let cfg = SimConfig {
                    seed: seed.unwrap_or(default_seed),
                    workers: timings,
                    master_compute: *master_compute,
                };
                cfg.validate(workers)?;
                Ok(Some(cfg))
            }
            BackendConfig::Tcp { .. } => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChecksSection {
    #[serde(default)]
    pub envelope: bool,
    #[serde(default)]
    pub descent: bool,
    #[serde(default)]
    pub consensus: bool,
    #[serde(default)]
    pub weighted_delay: bool,
    #[serde(default)]
    pub gap_bound: bool,
    /// Overrides the measured `L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    /// Overrides the measured `σ²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hoffman: Option<f64>,
    /// `S`; measured from the trace as `max |A_k| + 1` (capped at N) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_arrivals: Option<usize>,
    /// Absolute slack; defaults by solve type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
}

impl ChecksSection {
    pub fn any(&self) -> bool {
        self.envelope || self.descent || self.consensus || self.weighted_delay || self.gap_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Keep per-iteration worker iterates in the JSON trace.
    #[serde(default)]
    pub keep_iterates: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out(),
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub problem: ProblemSource,
    #[serde(default = "zero_reg")]
    pub regularizer: Regularizer,
    pub protocol: ProtocolSection,
    pub stop: StopSection,
    #[serde(default)]
    pub fista: FistaConfig,
    pub backend: BackendConfig,
    #[serde(default)]
    pub checks: ChecksSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Tolerance of the centralized reference solve that provides `F*`.
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
}

fn zero_reg() -> Regularizer {
    Regularizer::Zero
}
fn default_reference_tol() -> f64 {
    1e-10
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        // Dataset paths are relative to the config file.
        if let ProblemSource::Dataset { path: data, .. } = &mut cfg.problem {
            if data.is_relative() {
                if let Some(parent) = path.parent() {
                    *data = parent.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.problem.workers();
        if n == 0 {
            return Err(Error::InvalidConfig(
                "problem needs at least one worker".into(),
            ));
        }
        self.regularizer.validate()?;
        self.fista.validate()?;
        self.backend.sim_config(n, self.seed)?;
        if self.stop.target_objective.is_some() && self.stop.target_relative_gap.is_some() {
            return Err(Error::InvalidConfig(
                "set at most one of target_objective and target_relative_gap".into(),
            ));
        }
        if !(self.reference_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "reference_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::Stepsize;

    const SAMPLE: &str = r#"
seed = 7

[problem]
kind = "synthetic_logistic"
workers = 10
samples = 2000
dim = 50

[regularizer]
kind = "box"
bound = 10.0

[protocol]
rho = 0.01
tau = 5
min_arrivals = 1

[stop]
max_iter = 100
target_relative_gap = 1e-4

[fista]
stepsize = { fixed = 1e-4 }
grad_tol = 1e-3
max_inner = 1000

[backend]
kind = "sim"
timing = { compute = { kind = "log_normal", mu = 0.0, sigma = 0.5 }, uplink = { kind = "fixed", value = 0.0 }, downlink = { kind = "uniform", low = 0.0, high = 0.1 } }
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.fista.stepsize, Stepsize::Fixed(1e-4));
        assert_eq!(cfg.protocol.gamma, 0.0);
        assert_eq!(cfg.regularizer, Regularizer::Box { bound: 10.0 });
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_conflicting_targets() {
        let text = SAMPLE.replace(
            "target_relative_gap = 1e-4",
            "target_relative_gap = 1e-4\ntarget_objective = 3.0",
        );
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn rejects_wrong_timing_count() {
        let text = SAMPLE.replace(
            "kind = \"sim\"",
            "kind = \"sim\"\nworkers = [{ compute = { kind = \"fixed\", value = 1.0 }, uplink = { kind = \"fixed\", value = 0.0 }, downlink = { kind = \"fixed\", value = 0.0 } }]",
        );
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }
}
