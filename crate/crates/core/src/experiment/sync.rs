//! Standalone synchronous ADMM, used as an equivalence oracle for the
//! asynchronous protocol run with `τ = 1`, `A = N` and `γ = 0`.
//!
//! Each iteration first updates `x_0` from the current `(x_i, λ_i)`, then
//! every worker solves its subproblem against the new `x_0` and takes a dual
//! step.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::problem::ConsensusProblem;
use crate::prox::{dual_update, worker_subproblem, FistaConfig};
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReference {
    pub rho: f64,
    /// `x_0^0, …, x_0^{K+1}`.
    pub x0: Vec<DVector<f64>>,
    /// Worker iterates `x^0, …, x^K`.
    pub x: Vec<Vec<DVector<f64>>>,
    pub lambda: Vec<Vec<DVector<f64>>>,
    /// `F(x_0^k)` for `k = 0, …, K+1`.
    pub objective: Vec<f64>,
    /// `Σ_i ‖x_i^k - x_0^k‖²` for `k = 0, …, K`.
    pub consensus_err: Vec<f64>,
}

/// Runs `iters` synchronous iterations from the zero initialization.
pub fn sync_reference(
    p: &ConsensusProblem,
    rho: f64,
    iters: usize,
    fista: &FistaConfig,
) -> Result<SyncReference> {
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "rho must be positive, got {rho}"
        )));
    }
    let (n_workers, dim) = (p.workers(), p.dim());
    let reg = p.regularizer();
    let scale = n_workers as f64 * rho;
    let x0_update = |x: &[DVector<f64>], lambda: &[DVector<f64>]| -> DVector<f64> {
        let mut z = DVector::zeros(dim);
        for (xi, li) in x.iter().zip(lambda) {
            z += li + xi * rho;
        }
        reg.prox(&(z / scale), scale)
    };

    let mut x = vec![DVector::zeros(dim); n_workers];
    let mut lambda = vec![DVector::zeros(dim); n_workers];
    let mut out = SyncReference {
        rho,
        x0: vec![DVector::zeros(dim)],
        x: vec![x.clone()],
        lambda: vec![lambda.clone()],
        objective: vec![p.objective_value(&DVector::zeros(dim))?],
        consensus_err: vec![0.0],
    };
    for _ in 0..=iters {
        let x0 = x0_update(&x, &lambda);
        out.objective.push(p.objective_value(&x0)?);
        if out.x.len() > iters {
            out.x0.push(x0);
            break;
        }
        for i in 0..n_workers {
            let sub = worker_subproblem(p.local(i), &lambda[i], &x0, rho, fista, &x[i])?;
            lambda[i] = dual_update(&lambda[i], &sub.x_new, &x0, rho)?;
            x[i] = sub.x_new;
        }
        out.consensus_err
            .push(x.iter().map(|xi| dist_sq(xi, &x0)).sum());
        out.x0.push(x0);
        out.x.push(x.clone());
        out.lambda.push(lambda.clone());
    }
    Ok(out)
}

/// Largest absolute per-coordinate difference between an asynchronous trace
/// (recorded with iterates) and the synchronous reference.
///
/// The asynchronous master's `x_0^k` is the reference's `x_0^{k+1}` (the
/// reference spends its first update on the zero state), while the cached
/// worker pair after asynchronous iteration `k` equals the reference's
/// `(x^{k+1}, λ^{k+1})`.
pub fn max_deviation(trace: &Trace, reference: &SyncReference) -> Result<f64> {
    let snaps = trace
        .iterates
        .as_ref()
        .ok_or_else(|| Error::Precondition("trace was recorded without iterates".into()))?;
    let k_max = trace.iterations();
    if reference.x.len() < k_max + 1 || reference.x0.len() < k_max + 2 {
        return Err(Error::Precondition(format!(
            "reference covers {} iterations, trace has {k_max}",
            reference.x.len() - 1
        )));
    }
    let linf = |a: &DVector<f64>, b: &DVector<f64>| (a - b).amax();
    let mut worst: f64 = 0.0;
    for k in 0..=k_max {
        worst = worst.max(linf(&trace.x0_history[k], &reference.x0[k + 1]));
    }
    for (k, snap) in snaps.iter().enumerate() {
        for i in 0..snap.x.len() {
            worst = worst.max(linf(&snap.x[i], &reference.x[k + 1][i]));
            worst = worst.max(linf(&snap.lambda[i], &reference.lambda[k + 1][i]));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LocalObjective, Regularizer};
    use nalgebra::DMatrix;

    #[test]
    fn hand_worked_scalar_iterations() {
        // f_1 = ½x² - x, f_2 = ½x² + x, ρ = 1, no regularizer.
        // Worker solve: x = (x_0 - λ - q)/2; dual: λ += x - x_0.
        let f1 = LocalObjective::quadratic(DMatrix::identity(1, 1), DVector::from_vec(vec![-1.0]))
            .unwrap();
        let f2 = LocalObjective::quadratic(DMatrix::identity(1, 1), DVector::from_vec(vec![1.0]))
            .unwrap();
        let p = ConsensusProblem::new(vec![f1, f2], Regularizer::Zero).unwrap();
        let r = sync_reference(&p, 1.0, 3, &FistaConfig::default()).unwrap();
        // k=1: x_0 = 0; x = (0.5, -0.5); λ = (0.5, -0.5).
        // k=2: x_0 = (Σλ + Σx)/2 = 0; x = ((0 - 0.5 + 1)/2, (0 + 0.5 - 1)/2) = (0.25, -0.25);
        //      λ = (0.75, -0.75).
        // k=3: x_0 = 0; x = (0.125, -0.125); λ = (0.875, -0.875).
        let xs: Vec<f64> = r.x.iter().map(|x| x[0][0]).collect();
        let ls: Vec<f64> = r.lambda.iter().map(|l| l[0][0]).collect();
        // Exact up to the roundoff of the Cholesky solve.
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(u, v)| (u - v).abs() < 1e-14);
        assert!(close(&xs, &[0.0, 0.5, 0.25, 0.125]), "{xs:?}");
        assert!(close(&ls, &[0.0, 0.5, 0.75, 0.875]), "{ls:?}");
        assert!(r.x0.iter().all(|x0| x0[0].abs() < 1e-14));
        assert_eq!(r.x0.len(), 5);
    }
}
