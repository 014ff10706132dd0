use std::collections::BTreeMap;

use adadmm::analysis::certificate::{alpha, rho_threshold};
use adadmm::analysis::{certify, CertifyInput};
use adadmm::experiment::{
    parse_libsvm, partition_uniform, sync_reference, synthetic_logistic, synthetic_quadratic,
    write_libsvm, Dataset, ExperimentConfig, LogisticSpec, QuadraticSpec,
};
use adadmm::transport::sim::{sim_run, Distribution, SimConfig, SimTransport, WorkerTiming};
use adadmm::transport::wire::{decode, encode};
use adadmm::{
    run_to_completion, ConsensusProblem, DualInit, FistaConfig, LocalObjective, MasterState,
    ProtocolConfig, Regularizer, Report, RunOptions, StoppingRule, WireMessage,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quadratic_locals(workers: usize, dim: usize, seed: u64) -> Vec<LocalObjective> {
    let spec = QuadraticSpec {
        workers,
        dim,
        eig_min: 0.5,
        eig_max: 4.0,
    };
    synthetic_quadratic(&spec, seed).unwrap()
}

fn logistic_local(seed: u64) -> LocalObjective {
    let spec = LogisticSpec {
        samples: 40,
        dim: 6,
        label_noise: 0.1,
    };
    let d = synthetic_logistic(&spec, seed).unwrap();
    LocalObjective::logistic(d.features, d.labels).unwrap()
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, dim)
}

fn central_difference(f: &LocalObjective, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[j] += h;
        m[j] -= h;
        (f.value(&p).unwrap() - f.value(&m).unwrap()) / (2.0 * h)
    })
}

fn assert_gradient_matches(f: &LocalObjective, x: &DVector<f64>) -> Result<(), TestCaseError> {
    let g = f.gradient(x).unwrap();
    let fd = central_difference(f, x, 1e-6);
    let err = (&g - &fd).norm();
    prop_assert!(
        err <= 1e-5 * g.norm().max(1.0),
        "gradient {g} vs finite difference {fd}"
    );
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn quadratic_gradient_matches_finite_differences(seed in 0u64..1000, x in vector(5)) {
        let f = &quadratic_locals(1, 5, seed)[0];
        assert_gradient_matches(f, &DVector::from_vec(x))?;
    }

    #[test]
    fn logistic_gradient_matches_finite_differences(seed in 0u64..1000, x in vector(6)) {
        assert_gradient_matches(&logistic_local(seed), &DVector::from_vec(x))?;
    }

    #[test]
    fn gradients_respect_the_lipschitz_constant(seed in 0u64..1000, x in vector(6), y in vector(6)) {
        let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
        for f in [quadratic_locals(1, 6, seed).remove(0), logistic_local(seed)] {
            let lhs = (f.gradient(&x).unwrap() - f.gradient(&y).unwrap()).norm();
            prop_assert!(lhs <= f.lipschitz * (&x - &y).norm() * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn certificate_thresholds_are_monotone(
        workers in 1usize..20,
        tau in 1usize..8,
        sigma2 in 0.01f64..5.0,
        l in 0.1f64..10.0,
    ) {
        prop_assert!(alpha(workers, sigma2, tau + 1) >= alpha(workers, sigma2, tau));
        prop_assert!(alpha(workers, sigma2 * 2.0, tau) <= alpha(workers, sigma2, tau));
        let a = alpha(workers, sigma2, tau);
        prop_assert!(rho_threshold(l * 1.5, sigma2, workers, a) >= rho_threshold(l, sigma2, workers, a));
        // Waiting for fewer workers never loosens the requirement on γ.
        let input = |s: usize| CertifyInput {
            lipschitz: l,
            sigma2,
            workers,
            max_arrivals: s,
            tau,
            gamma_floor: None,
            hoffman: None,
            rho: None,
        };
        if workers >= 2 {
            let small = certify(&input(1)).unwrap();
            let large = certify(&input(workers)).unwrap();
            prop_assert!(large.gamma_min >= small.gamma_min);
        }
    }

    #[test]
    fn larger_gamma_gives_a_faster_rate(scale in 1.0f64..100.0, workers in 1usize..10, tau in 1usize..5) {
        let mut i = CertifyInput {
            lipschitz: 2.0,
            sigma2: 1.0,
            workers,
            max_arrivals: workers,
            tau,
            gamma_floor: None,
            hoffman: None,
            rho: None,
        };
        let base = certify(&i).unwrap();
        i.gamma_floor = Some(base.gamma_min * scale * 1.01);
        let faster = certify(&i).unwrap();
        let (e0, e1) = (base.eta.unwrap(), faster.eta.unwrap());
        prop_assert!(e0 > 1.0 && e1 > 1.0);
        prop_assert!(e1 < e0);
    }

    #[test]
    fn barrier_matches_a_brute_force_oracle(
        workers in 1usize..7,
        tau in 1usize..5,
        bits in 0u32..128,
        delays in prop::collection::vec(0usize..6, 7),
        a in 1usize..7,
    ) {
        let a = a.min(workers);
        let mut m = MasterState::new(workers, 2);
        for (d, &want) in m.delays.iter_mut().zip(&delays) {
            *d = want.min(tau - 1);
        }
        let arrived: Vec<usize> = (0..workers).filter(|i| bits & (1 << i) != 0).collect();
        for &i in &arrived {
            m.receive(Report { worker: i, x: DVector::zeros(2), lambda: DVector::zeros(2), tag: 1 }).unwrap();
        }
        let cfg = ProtocolConfig {
            rho: 1.0,
            gamma: 0.0,
            tau,
            min_arrivals: a,
            stop: StoppingRule::iterations(1),
            dual_init: DualInit::Zero,
        };
        // Ready exactly when enough reports are in and applying the update
        // would leave every delay counter below τ.
        let after: Vec<usize> = (0..workers)
            .map(|i| if arrived.contains(&i) { 0 } else { m.delays[i] + 1 })
            .collect();
        let oracle = arrived.len() >= a && after.iter().all(|&d| d < tau);
        prop_assert_eq!(m.barrier_ready(&cfg), oracle);
        if oracle {
            m.step(&cfg, &Regularizer::Zero).unwrap();
            prop_assert_eq!(&m.delays, &after);
        }
    }

    #[test]
    fn partition_preserves_the_sample_multiset(rows in 1usize..60, workers in 1usize..8, seed in 0u64..100) {
        let workers = workers.min(rows);
        let features = DMatrix::from_fn(rows, 3, |r, c| (r * 3 + c) as f64);
        let labels = DVector::from_fn(rows, |r, _| if r % 3 == 0 { 1.0 } else { -1.0 });
        let data = Dataset::new(features, labels).unwrap();
        let shards = partition_uniform(&data, workers, seed).unwrap();
        let key = |d: &Dataset, r: usize| -> Vec<u64> {
            let mut k: Vec<u64> = d.features.row(r).iter().map(|v| v.to_bits()).collect();
            k.push(d.labels[r].to_bits());
            k
        };
        let mut want = BTreeMap::new();
        for r in 0..rows {
            *want.entry(key(&data, r)).or_insert(0) += 1;
        }
        let mut got = BTreeMap::new();
        for s in &shards {
            for r in 0..s.rows() {
                *got.entry(key(s, r)).or_insert(0) += 1;
            }
        }
        prop_assert_eq!(want, got);
        let sizes: Vec<usize> = shards.iter().map(Dataset::rows).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn wire_frames_round_trip(
        x in prop::collection::vec(prop::num::f64::ANY, 0..20),
        worker in 0usize..1000,
        tag in any::<u64>(),
        sender in any::<u32>(),
        kind in 0u8..5,
    ) {
        let v = DVector::from_vec(x.clone());
        let msg = match kind {
            0 => WireMessage::Broadcast { x0: v, k: tag },
            1 => WireMessage::Report(Report { worker, x: v.clone(), lambda: v.map(|e| -e), tag }),
            2 => WireMessage::Shutdown,
            3 => WireMessage::Register { worker },
            _ => WireMessage::Error { code: tag },
        };
        let frame = encode(&msg, sender);
        let (back, s) = decode(&frame).unwrap();
        // Reports and handshakes always carry the worker index as sender.
        let expected = if matches!(kind, 1 | 3) { worker as u32 } else { sender };
        prop_assert_eq!(s, expected);
        // Compare bit patterns so NaN payloads count as equal.
        prop_assert_eq!(encode(&back, s), frame);
    }

    #[test]
    fn corrupted_frames_are_rejected(x in vector(4), byte in 4usize..60, bit in 0u8..8) {
        let msg = WireMessage::Broadcast { x0: DVector::from_vec(x), k: 9 };
        let mut frame = encode(&msg, 3);
        let byte = byte % frame.len();
        frame[byte] ^= 1 << bit;
        prop_assert!(decode(&frame).is_err());
    }
}

fn sim_problem() -> ConsensusProblem {
    ConsensusProblem::new(quadratic_locals(5, 4, 11), Regularizer::L1 { weight: 0.2 }).unwrap()
}

fn sim_cfg(seed: u64) -> (ProtocolConfig, SimConfig) {
    let cfg = ProtocolConfig {
        rho: 3.0,
        gamma: 0.5,
        tau: 3,
        min_arrivals: 1,
        stop: StoppingRule::iterations(300),
        dual_init: DualInit::Zero,
    };
    let timing = WorkerTiming {
        compute: Distribution::LogNormal {
            mu: 0.0,
            sigma: 1.0,
        },
        uplink: Distribution::Uniform {
            low: 0.0,
            high: 2.0,
        },
        downlink: Distribution::Uniform {
            low: 0.0,
            high: 2.0,
        },
    };
    let sim = SimConfig::homogeneous(5, seed, timing, Distribution::fixed(0.01));
    (cfg, sim)
}

#[test]
fn simulator_is_deterministic_per_seed() {
    let p = sim_problem();
    let run = |seed| {
        let (cfg, sim) = sim_cfg(seed);
        let t = sim_run(
            &p,
            &cfg,
            &FistaConfig::default(),
            &sim,
            RunOptions::default(),
        )
        .unwrap();
        serde_json::to_string(&t).unwrap()
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn reports_reach_the_master_in_send_order() {
    let p = sim_problem();
    for seed in 0..20 {
        let (cfg, sim) = sim_cfg(seed);
        let mut t = SimTransport::new(&p, cfg.rho, FistaConfig::default(), sim)
            .unwrap()
            .with_event_log();
        // The master rejects any report whose tag is out of sequence, so a
        // completed run already implies per-link FIFO delivery.
        run_to_completion(&p, &cfg, &mut t, RunOptions::default()).unwrap();
        let log = t.event_log();
        assert!(log.windows(2).all(|w| w[1].0 >= w[0].0));
        for i in 0..5 {
            let done = format!("worker {i} done");
            let report = format!("report from worker {i}");
            let mut in_flight = 0i64;
            for (_, e) in log {
                if e.starts_with(&done) {
                    in_flight += 1;
                } else if *e == report {
                    in_flight -= 1;
                }
                assert!((0..=1).contains(&in_flight), "seed {seed} worker {i}");
            }
        }
    }
}

#[test]
fn clocks_account_for_the_whole_run() {
    let p = sim_problem();
    for seed in 0..10 {
        let (cfg, sim) = sim_cfg(seed);
        let t = sim_run(
            &p,
            &cfg,
            &FistaConfig::default(),
            &sim,
            RunOptions::default(),
        )
        .unwrap();
        let end = t.records.last().unwrap().time;
        assert!((t.master_clock.total() - end).abs() <= 1e-9 * end.max(1.0));
        // Record clocks are cumulative, so each record's split sums to its time.
        for r in &t.records {
            assert!((r.master_compute + r.master_wait - r.time).abs() <= 1e-9 * r.time.max(1.0));
        }
        assert!(t
            .records
            .windows(2)
            .all(|w| w[1].master_compute >= w[0].master_compute));
        for c in &t.worker_clocks {
            assert!(c.compute >= 0.0 && c.wait >= 0.0);
            assert!(
                (c.total() - end).abs() <= 1e-9 * end.max(1.0),
                "{c:?} vs {end}"
            );
        }
    }
}

#[test]
fn close_top_eigenvalues_still_give_the_lipschitz_constant() {
    // Random spectra in [1, 10] put several eigenvalues near the top, which
    // stalls plain power iteration.
    let spec = QuadraticSpec {
        workers: 16,
        dim: 20,
        eig_min: 1.0,
        eig_max: 10.0,
    };
    for f in synthetic_quadratic(&spec, 1).unwrap() {
        assert!((f.lipschitz - 10.0).abs() < 1e-9, "{}", f.lipschitz);
        assert!((f.estimate_lipschitz().unwrap() - 10.0).abs() < 1e-6);
    }
}

#[test]
fn libsvm_round_trip_of_a_hundred_lines() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let features = DMatrix::from_fn(100, 12, |_, _| {
        if rng.random_bool(0.6) {
            0.0
        } else {
            rng.random_range(-1e3..1e3) / 7.0
        }
    });
    let labels = DVector::from_fn(100, |r, _| if r % 2 == 0 { 1.0 } else { -1.0 });
    let data = Dataset::new(features, labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.svm");
    write_libsvm(&path, &data).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 100);
    assert_eq!(parse_libsvm(&path, Some(12)).unwrap(), data);
}

#[test]
fn shipped_configs_round_trip_through_toml() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&path).unwrap();
            let cfg = ExperimentConfig::from_toml(&text).unwrap();
            let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(cfg, again, "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

#[test]
fn synchronous_reference_reaches_the_optimum() {
    let locals = quadratic_locals(4, 5, 21);
    // Closed-form minimizer of Σ ½xᵀQ_i x + q_iᵀx.
    let mut q_sum = DMatrix::zeros(5, 5);
    let mut b = DVector::zeros(5);
    for f in &locals {
        if let adadmm::Family::Quadratic { q_mat, q } = &f.family {
            q_sum += q_mat;
            b -= q;
        }
    }
    let x_star = q_sum.clone().lu().solve(&b).unwrap();
    let f_star: f64 = locals.iter().map(|f| f.value(&x_star).unwrap()).sum();

    let p = ConsensusProblem::new(locals, Regularizer::Zero).unwrap();
    let r = sync_reference(&p, 2.0, 500, &FistaConfig::default()).unwrap();
    assert!(r.consensus_err[500] < 1e-8, "{}", r.consensus_err[500]);
    let last = *r.objective.last().unwrap();
    assert!(
        (last - f_star).abs() <= 1e-8 * f_star.abs().max(1.0),
        "{last} vs {f_star}"
    );
}
