//! Parameter thresholds that guarantee a linear rate of the augmented
//! Lagrangian gap, and the resulting rate factor `η = 1 + 1/(δγ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyInput {
    /// Lipschitz constant `L` of the local gradients.
    pub lipschitz: f64,
    /// Strong convexity modulus `σ²` (of `f_i`, or of `g_i` when a Hoffman
    /// constant is given for costs of the form `g_i(A_i x)`).
    pub sigma2: f64,
    pub workers: usize,
    /// Bound `S` with `|A_k| < S` on every iteration.
    pub max_arrivals: usize,
    pub tau: usize,
    /// Lower bound on the returned `γ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_floor: Option<f64>,
    /// Hoffman error-bound constant `c` for the non-strongly-convex variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hoffman: Option<f64>,
    /// Penalty to certify; defaults to the smallest admissible `ρ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostClass {
    StronglyConvex,
    /// `f_i = g_i(A_i x)` with strongly convex `g_i` and a Hoffman constant.
    ComposedStronglyConvex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub input: CertifyInput,
    pub class: CostClass,
    pub alpha: f64,
    pub rho_min: f64,
    pub rho: f64,
    pub beta: f64,
    pub gamma_min: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Undefined when `γ = 0`.
    pub eta: Option<f64>,
}

/// `α(τ) = 1 + (2 + 2^τ(τ - 1)) / (1 + 8Nσ²)`.
pub fn alpha(workers: usize, sigma2: f64, tau: usize) -> f64 {
    let t = tau as f64;
    1.0 + (2.0 + 2f64.powi(tau as i32) * (t - 1.0)) / (1.0 + 8.0 * workers as f64 * sigma2)
}

/// `β(ρ, τ) = 2(τ-1)[((1+ρ²)S + S/N)/2 · (2^{τ-1} - 1) + (4^{τ-1} - 1)]`.
pub fn beta(rho: f64, tau: usize, max_arrivals: usize, workers: usize) -> f64 {
    if tau <= 1 {
        return 0.0;
    }
    let s = max_arrivals as f64;
    let e = (tau - 1) as i32;
    let bracket = ((1.0 + rho * rho) * s + s / workers as f64) / 2.0 * (2f64.powi(e) - 1.0)
        + (4f64.powi(e) - 1.0);
    2.0 * (tau - 1) as f64 * bracket
}

/// `max{((1 + L²) + sqrt((1 + L²)² + 8L²α)) / 2, σ² + 1/(8N)}`.
pub fn rho_threshold(lipschitz: f64, sigma2: f64, workers: usize, alpha: f64) -> f64 {
    let a = 1.0 + lipschitz * lipschitz;
    let root = (a + (a * a + 8.0 * lipschitz * lipschitz * alpha).sqrt()) / 2.0;
    root.max(sigma2 + 1.0 / (8.0 * workers as f64))
}

pub fn certify(input: &CertifyInput) -> Result<RateCertificate> {
    let CertifyInput {
        lipschitz,
        sigma2,
        workers,
        max_arrivals,
        tau,
        gamma_floor,
        hoffman,
        rho,
    } = *input;
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::Precondition(format!(
            "L must be positive, got {lipschitz}"
        )));
    }
    if workers == 0 {
        return Err(Error::Precondition("N must be at least 1".into()));
    }
    if max_arrivals < 1 || max_arrivals > workers {
        return Err(Error::Precondition(format!(
            "S must lie in [1, N = {workers}], got {max_arrivals}"
        )));
    }
    if tau < 1 {
        return Err(Error::Precondition("τ must be at least 1".into()));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::Precondition(format!(
            "σ² must be nonnegative, got {sigma2}"
        )));
    }
    let class = match hoffman {
        None if sigma2 == 0.0 => {
            return Err(Error::Precondition(
                "σ² = 0: costs that are not strongly convex require a Hoffman constant".into(),
            ))
        }
        None => CostClass::StronglyConvex,
        Some(c) if !(c > 0.0 && c.is_finite()) => {
            return Err(Error::Precondition(format!(
                "Hoffman constant must be positive, got {c}"
            )))
        }
        Some(_) if sigma2 == 0.0 => {
            return Err(Error::Precondition(
                "the composed-cost certificate needs a positive σ² for g_i".into(),
            ))
        }
        Some(_) => CostClass::ComposedStronglyConvex,
    };
    if let Some(f) = gamma_floor {
        if !(f >= 0.0 && f.is_finite()) {
            return Err(Error::Precondition(format!(
                "γ floor must be nonnegative, got {f}"
            )));
        }
    }

    let n = workers as f64;
    let alpha = alpha(workers, sigma2, tau);
    let rho_min = rho_threshold(lipschitz, sigma2, workers, alpha);
    // The root solves ρ² - (1 + L²)ρ - 2L²α = 0; guard against a formula slip.
    let a = 1.0 + lipschitz * lipschitz;
    let residual = rho_min * rho_min - a * rho_min - 2.0 * lipschitz * lipschitz * alpha;
    if residual < -1e-9 * rho_min * rho_min {
        return Err(Error::Precondition(format!(
            "ρ_min = {rho_min} does not satisfy its defining inequality (residual {residual:e})"
        )));
    }
    let rho = match rho {
        None => rho_min,
        Some(r) if r >= rho_min => r,
        Some(r) => {
            return Err(Error::Precondition(format!(
                "requested ρ = {r} is below the threshold ρ_min = {rho_min}"
            )))
        }
    };
    let beta = beta(rho, tau, max_arrivals, workers);
    let second = match (class, hoffman) {
        (CostClass::ComposedStronglyConvex, Some(c)) => {
            8.0 * n * (rho - sigma2 / c) + 4.0 * n * sigma2
        }
        _ => 8.0 * n * (rho - sigma2),
    };
    let gamma_min = (beta - n * rho / 2.0 + 1.0).max(second);
    let gamma = gamma_floor.map_or(gamma_min, |f| gamma_min.max(f));
    let effective_sigma2 = match hoffman {
        Some(c) => sigma2 / c,
        None => sigma2,
    };
    let delta = ((rho * n + gamma) / (effective_sigma2 * n) - 1.0).max(1.0);
    let eta = (gamma > 0.0).then(|| 1.0 + 1.0 / (delta * gamma));
    Ok(RateCertificate {
        input: *input,
        class,
        alpha,
        rho_min,
        rho,
        beta,
        gamma_min,
        gamma,
        delta,
        eta,
    })
}
