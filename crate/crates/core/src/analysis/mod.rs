//! Convergence-rate certificates and trace validators.

pub mod certificate;
pub mod checks;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::ConsensusProblem;

pub use certificate::{certify, CertifyInput, CostClass, RateCertificate};
pub use checks::{
    check_consensus_bound, check_descent_lemma, check_envelope, check_lagrangian_gap_bound,
    check_weighted_delay_bound, CheckReport, DelaySubset, GapBoundParams, Margin, Slack,
};

fn check_blocks(
    p: &ConsensusProblem,
    x: &[DVector<f64>],
    x0: &DVector<f64>,
    lambda: &[DVector<f64>],
) -> Result<()> {
    if x.len() != p.workers() || lambda.len() != p.workers() {
        return Err(Error::DimensionMismatch {
            expected: p.workers(),
            found: if x.len() != p.workers() {
                x.len()
            } else {
                lambda.len()
            },
        });
    }
    check_dim(p.dim(), x0.len())?;
    for (xi, li) in x.iter().zip(lambda) {
        check_dim(p.dim(), xi.len())?;
        check_dim(p.dim(), li.len())?;
    }
    Ok(())
}

/// `Σ f_i(x_i) + h(x_0) + Σ λ_iᵀ(x_i - x_0) + (ρ/2) Σ ‖x_i - x_0‖²`.
/// Infinite when `x_0` lies outside the domain of `h`.
pub fn augmented_lagrangian(
    p: &ConsensusProblem,
    x: &[DVector<f64>],
    x0: &DVector<f64>,
    lambda: &[DVector<f64>],
    rho: f64,
) -> Result<f64> {
    check_blocks(p, x, x0, lambda)?;
    let mut total = p.regularizer().value(x0);
    for ((f, xi), li) in p.locals().iter().zip(x).zip(lambda) {
        let r = xi - x0;
        total += f.value(xi)? + li.dot(&r) + 0.5 * rho * r.norm_squared();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `max_i ‖∇f_i(x_i) + λ_i‖`.
    pub stationarity: f64,
    /// `max_i ‖x_i - x_0‖`.
    pub consensus: f64,
    /// Distance of `Σ λ_i` to `∂h(x_0)`.
    pub x0_opt: f64,
}

pub fn kkt_residuals(
    p: &ConsensusProblem,
    x: &[DVector<f64>],
    x0: &DVector<f64>,
    lambda: &[DVector<f64>],
) -> Result<KktResiduals> {
    check_blocks(p, x, x0, lambda)?;
    let mut stationarity: f64 = 0.0;
    let mut consensus: f64 = 0.0;
    let mut sum_lambda = DVector::zeros(p.dim());
    for ((f, xi), li) in p.locals().iter().zip(x).zip(lambda) {
        stationarity = stationarity.max((f.gradient(xi)? + li).norm());
        consensus = consensus.max((xi - x0).norm());
        sum_lambda += li;
    }
    let x0_opt = p.regularizer().subgradient_distance(x0, &sum_lambda);
    Ok(KktResiduals {
        stationarity,
        consensus,
        x0_opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LocalObjective, Regularizer};
    use nalgebra::DMatrix;

    fn problem() -> ConsensusProblem {
        let f1 = LocalObjective::quadratic(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DVector::from_vec(vec![1.0, -1.0]),
        )
        .unwrap();
        let f2 =
            LocalObjective::quadratic(DMatrix::identity(2, 2), DVector::from_vec(vec![0.0, 2.0]))
                .unwrap();
        ConsensusProblem::new(vec![f1, f2], Regularizer::Zero).unwrap()
    }

    #[test]
    fn penalty_and_dual_vanish_at_consensus() {
        let p = problem();
        let x0 = DVector::from_vec(vec![0.3, -0.7]);
        let lambda = vec![
            DVector::from_vec(vec![5.0, 1.0]),
            DVector::from_vec(vec![-2.0, 3.0]),
        ];
        let l = augmented_lagrangian(&p, &[x0.clone(), x0.clone()], &x0, &lambda, 4.0).unwrap();
        assert!((l - p.objective_value(&x0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn scalar_loop_oracle() {
        let p = problem();
        let x = vec![
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![-1.0, 0.5]),
        ];
        let x0 = DVector::from_vec(vec![0.25, -0.5]);
        let lambda = vec![
            DVector::from_vec(vec![0.1, -0.2]),
            DVector::from_vec(vec![0.3, 0.4]),
        ];
        let rho = 1.5;
        let mut want = 0.0;
        for i in 0..2 {
            want += p.local(i).value(&x[i]).unwrap();
            for j in 0..2 {
                let r = x[i][j] - x0[j];
                want += lambda[i][j] * r + 0.5 * rho * r * r;
            }
        }
        let got = augmented_lagrangian(&p, &x, &x0, &lambda, rho).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn box_violation_is_infinite() {
        let f = LocalObjective::quadratic(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        let p = ConsensusProblem::new(vec![f], Regularizer::Box { bound: 1.0 }).unwrap();
        let x0 = DVector::from_vec(vec![2.0]);
        let l = augmented_lagrangian(
            &p,
            std::slice::from_ref(&x0),
            &x0,
            &[DVector::zeros(1)],
            1.0,
        )
        .unwrap();
        assert_eq!(l, f64::INFINITY);
    }

    #[test]
    fn kkt_at_optimum() {
        let p = problem();
        let r = p.solve_reference(1e-12).unwrap();
        let x = vec![r.x_star.clone(), r.x_star.clone()];
        let lambda: Vec<_> = (0..2)
            .map(|i| -p.local(i).gradient(&r.x_star).unwrap())
            .collect();
        let k = kkt_residuals(&p, &x, &r.x_star, &lambda).unwrap();
        assert!(k.stationarity <= 1e-10 && k.consensus <= 1e-10 && k.x0_opt <= 1e-10);
    }

    #[test]
    fn consensus_is_max_norm() {
        let p = problem();
        let x = vec![
            DVector::from_vec(vec![3.0, 4.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        ];
        let k = kkt_residuals(
            &p,
            &x,
            &DVector::zeros(2),
            &[DVector::zeros(2), DVector::zeros(2)],
        )
        .unwrap();
        assert_eq!(k.consensus, 5.0);
    }
}
