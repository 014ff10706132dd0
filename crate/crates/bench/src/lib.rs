//! Shared fixtures for the benchmarks.

use adadmm::experiment::{synthetic_logistic, synthetic_quadratic, LogisticSpec, QuadraticSpec};
use adadmm::transport::{Distribution, SimConfig, WorkerTiming};
use adadmm::{
    ConsensusProblem, DualInit, LocalObjective, ProtocolConfig, Regularizer, StoppingRule,
};
use nalgebra::DVector;

pub fn quadratic_problem(workers: usize, dim: usize) -> ConsensusProblem {
    let spec = QuadraticSpec {
        workers,
        dim,
        eig_min: 1.0,
        eig_max: 10.0,
    };
    let locals = synthetic_quadratic(&spec, 1).expect("valid spec");
    ConsensusProblem::new(locals, Regularizer::L1 { weight: 0.1 }).expect("valid problem")
}

pub fn logistic_local(samples: usize, dim: usize) -> LocalObjective {
    let spec = LogisticSpec {
        samples,
        dim,
        label_noise: 0.1,
    };
    let d = synthetic_logistic(&spec, 2).expect("valid spec");
    LocalObjective::logistic(d.features, d.labels).expect("valid data")
}

/// Deterministic test vector with entries in `[-1, 1]`.
pub fn ramp(dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |i, _| ((i * 37 % 101) as f64 / 50.0) - 1.0)
}

pub fn protocol(tau: usize, min_arrivals: usize, max_iter: usize) -> ProtocolConfig {
    ProtocolConfig {
        rho: 20.0,
        gamma: 1.0,
        tau,
        min_arrivals,
        stop: StoppingRule::iterations(max_iter),
        dual_init: DualInit::Zero,
    }
}

pub fn heterogeneous_cluster(workers: usize, seed: u64) -> SimConfig {
    let timing = WorkerTiming {
        compute: Distribution::LogNormal {
            mu: 0.0,
            sigma: 0.8,
        },
        uplink: Distribution::Uniform {
            low: 0.0,
            high: 0.2,
        },
        downlink: Distribution::Uniform {
            low: 0.0,
            high: 0.2,
        },
    };
    SimConfig::homogeneous(workers, seed, timing, Distribution::fixed(0.01))
}
