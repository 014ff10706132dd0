//! Subproblem solvers: the worker `x_i`-update, the dual step and the master
//! `x_0`-update in closed form for each regularizer.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::{Family, LocalObjective, Regularizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepsize {
    /// `1 / (L_i + ρ)`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FistaConfig {
    pub stepsize: Stepsize,
    /// Stop once the subproblem gradient norm is at most this.
    pub grad_tol: f64,
    pub max_inner: usize,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self {
            stepsize: Stepsize::Auto,
            grad_tol: 1e-6,
            max_inner: 50_000,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        if let Stepsize::Fixed(s) = self.stepsize {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "stepsize must be positive, got {s}"
                )));
            }
        }
        if self.max_inner == 0 {
            return Err(Error::InvalidConfig("max_inner must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemResult {
    pub x_new: DVector<f64>,
    pub inner_iters: usize,
    pub final_grad_norm: f64,
    /// False when `max_inner` was hit before reaching `grad_tol`.
    pub converged: bool,
}

/// Minimizes `f_i(x) + xᵀλ_i + (ρ/2)‖x - x̂_0‖²`.
///
/// Quadratic costs are solved exactly from `(Q + ρI)x = ρx̂_0 - λ_i - q`.
/// Logistic costs run FISTA from `warm_start` on the subproblem gradient
/// `∇f_i(x) + λ_i + ρ(x - x̂_0)`.
pub fn worker_subproblem(
    obj: &LocalObjective,
    lambda: &DVector<f64>,
    x_hat0: &DVector<f64>,
    rho: f64,
    cfg: &FistaConfig,
    warm_start: &DVector<f64>,
) -> Result<SubproblemResult> {
    let n = obj.dim();
    check_dim(n, lambda.len())?;
    check_dim(n, x_hat0.len())?;
    check_dim(n, warm_start.len())?;
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "rho must be positive, got {rho}"
        )));
    }
    let grad = |x: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(obj.gradient(x)? + lambda + (x - x_hat0) * rho)
    };

    match &obj.family {
        Family::Quadratic { q_mat, q } => {
            let system = q_mat + DMatrix::identity(n, n) * rho;
            let rhs = x_hat0 * rho - lambda - q;
            let chol = Cholesky::new(system)
                .ok_or_else(|| Error::InvalidProblem("Q + ρI is not positive definite".into()))?;
            let x_new = chol.solve(&rhs);
            let final_grad_norm = grad(&x_new)?.norm();
            Ok(SubproblemResult {
                x_new,
                inner_iters: 1,
                final_grad_norm,
                converged: true,
            })
        }
        Family::Logistic { .. } => {
            cfg.validate()?;
            let limit = 1.0 / (obj.lipschitz + rho);
            let step = match cfg.stepsize {
                Stepsize::Auto => limit,
                Stepsize::Fixed(s) if s <= limit * (1.0 + 1e-12) => s,
                Stepsize::Fixed(s) => {
                    return Err(Error::InvalidConfig(format!(
                        "fixed stepsize {s:e} exceeds 1/(L+ρ) = {limit:e}; FISTA may diverge"
                    )))
                }
            };
            fista(grad, warm_start.clone(), step, cfg.grad_tol, cfg.max_inner)
        }
    }
}

/// FISTA for a smooth unconstrained objective given only its gradient.
/// Momentum is reset whenever the step goes against the extrapolation.
fn fista<G>(
    grad: G,
    x0: DVector<f64>,
    step: f64,
    tol: f64,
    max_inner: usize,
) -> Result<SubproblemResult>
where
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = x0;
    let mut gx = grad(&x)?;
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut t = 1.0_f64;
    let mut iters = 0;
    while iters < max_inner {
        if gx.norm() <= tol {
            break;
        }
        let x_next = &y - &gy * step;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if gy.dot(&(&x_next - &x)) > 0.0 {
            t = 1.0;
            y = x_next.clone();
        } else {
            y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
            t = t_next;
        }
        x = x_next;
        gx = grad(&x)?;
        gy = grad(&y)?;
        iters += 1;
    }
    let final_grad_norm = gx.norm();
    Ok(SubproblemResult {
        x_new: x,
        inner_iters: iters,
        final_grad_norm,
        converged: final_grad_norm <= tol,
    })
}

/// `λ_i + ρ(x_new - x̂_0)`.
pub fn dual_update(
    lambda: &DVector<f64>,
    x_new: &DVector<f64>,
    x_hat0: &DVector<f64>,
    rho: f64,
) -> Result<DVector<f64>> {
    check_dim(lambda.len(), x_new.len())?;
    check_dim(lambda.len(), x_hat0.len())?;
    Ok(lambda + (x_new - x_hat0) * rho)
}

/// Master update: minimizes
/// `h(x_0) - x_0ᵀΣλ + (ρ/2)Σ‖x_i - x_0‖² + (γ/2)‖x_0 - x_prev‖²`
/// through `z = (Σλ + ρΣx + γ x_prev) / (Nρ + γ)` and the prox of `h`.
pub fn master_prox(
    reg: &Regularizer,
    sum_lambda: &DVector<f64>,
    sum_x: &DVector<f64>,
    x0_prev: &DVector<f64>,
    rho: f64,
    gamma: f64,
    n_workers: usize,
) -> Result<DVector<f64>> {
    check_dim(sum_lambda.len(), sum_x.len())?;
    check_dim(sum_lambda.len(), x0_prev.len())?;
    let denom = n_workers as f64 * rho + gamma;
    if !(denom > 0.0) {
        return Err(Error::Precondition(format!(
            "Nρ + γ must be positive, got {denom}"
        )));
    }
    let z = (sum_lambda + sum_x * rho + x0_prev * gamma) / denom;
    Ok(reg.prox(&z, denom))
}

/// `sign(v_j) · max(|v_j| - t, 0)`; exact ties `|v_j| = t` give zero.
pub fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| {
        if x.abs() <= t {
            0.0
        } else {
            x - t * x.signum()
        }
    })
}
