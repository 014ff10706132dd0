//! Numerical validators for the per-iteration inequalities that drive the
//! linear-rate argument. Each check is a pure function of a trace and returns
//! a report with one margin (`rhs - lhs`) per checked iteration.
//!
//! The descent, consensus and gap-bound inequalities assume every cached
//! `(x_i, λ_i)` satisfies `∇f_i(x_i) + λ_i = 0`, which the zero
//! initialization does not. Iterations before every worker has reported twice
//! are therefore skipped and counted in the report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::trace::{IterationRecord, Trace};

use super::certificate::RateCertificate;

/// Absolute tolerance added to every right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub value: f64,
    pub rule: String,
}

impl Slack {
    /// For runs whose worker subproblems are solved exactly (quadratic costs).
    pub fn exact() -> Self {
        Self {
            value: 1e-9,
            rule: "exact subproblem solves: 1e-9".into(),
        }
    }

    /// `10 · grad_tol` for runs with inexact FISTA solves.
    pub fn from_grad_tol(grad_tol: f64) -> Self {
        Self {
            value: 10.0 * grad_tol,
            rule: format!(
                "10 x grad_tol = {:e} (engineering constant)",
                10.0 * grad_tol
            ),
        }
    }

    pub fn fixed(value: f64) -> Self {
        Self {
            value,
            rule: format!("fixed {value:e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`, slack included; negative means violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub slack: Slack,
    pub checked: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
    pub violations: Vec<Margin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst: Option<Margin>,
    pub margins: Vec<Margin>,
    pub notes: Vec<String>,
}

impl CheckReport {
    fn new(check: &str, slack: &Slack) -> Self {
        Self {
            check: check.into(),
            slack: slack.clone(),
            checked: 0,
            skipped: 0,
            skip_reason: None,
            violations: Vec::new(),
            worst: None,
            margins: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn push(&mut self, k: usize, lhs: f64, rhs_with_slack: f64) {
        self.push_margin(k, lhs, rhs_with_slack, rhs_with_slack - lhs);
    }

    fn push_margin(&mut self, k: usize, lhs: f64, rhs_with_slack: f64, margin: f64) {
        let m = Margin {
            k,
            lhs,
            rhs: rhs_with_slack,
            margin: if margin.is_nan() {
                f64::NEG_INFINITY
            } else {
                margin
            },
        };
        self.checked += 1;
        if m.margin < 0.0 {
            self.violations.push(m);
        }
        if self.worst.is_none_or(|w| m.margin < w.margin) {
            self.worst = Some(m);
        }
        self.margins.push(m);
    }

    fn skip(&mut self, reason: &str) {
        self.skipped += 1;
        self.skip_reason.get_or_insert_with(|| reason.to_string());
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        let worst = self.worst.map_or("n/a".to_string(), |w| {
            format!("{:.3e} at k = {}", w.margin, w.k)
        });
        format!(
            "{}: {} ({} checked, {} skipped, {} violations, worst margin {worst})",
            self.check,
            if self.passed() { "pass" } else { "FAIL" },
            self.checked,
            self.skipped,
            self.violations.len()
        )
    }
}

const WARMUP_REASON: &str = "warm-up: some cached worker pair predates its second report";

fn sum_over<F: Fn(usize) -> f64>(idx: impl Iterator<Item = usize>, f: F) -> f64 {
    idx.map(f).sum()
}

fn unarrived(rec: &IterationRecord) -> impl Iterator<Item = usize> + '_ {
    (0..rec.delays_before.len()).filter(|i| !rec.arrived.contains(i))
}

fn stale_gap(rec: &IterationRecord, i: usize) -> Result<f64> {
    rec.stale_gap_sq[i].ok_or_else(|| {
        Error::MissingHistory(format!(
            "iteration {}: worker {i} has no recorded x_0 basis (last arrival before k is absent)",
            rec.k
        ))
    })
}

fn prior_move(rec: &IterationRecord, i: usize) -> Result<f64> {
    rec.prior_move_sq[i].ok_or_else(|| {
        Error::MissingHistory(format!(
            "iteration {}: worker {i} has no recorded move from its last arrival",
            rec.k
        ))
    })
}

/// `0 ≤ Δ_{k+1} ≤ η^{-(k+1)} Δ_0 + slack` for every `k`.
pub fn check_envelope(trace: &Trace, cert: &RateCertificate, slack: &Slack) -> Result<CheckReport> {
    let eta = cert.eta.ok_or_else(|| {
        Error::Precondition("η is undefined at γ = 0; use the γ = 0 gap-bound check instead".into())
    })?;
    let deltas = trace.deltas()?;
    let mut report = CheckReport::new("envelope", slack);
    let p = &trace.params;
    if p.rho < cert.rho_min || p.gamma < cert.gamma_min {
        report.notes.push(format!(
            "trace parameters (ρ = {}, γ = {}) are below the certified thresholds (ρ_min = {}, γ_min = {}); violations are permitted",
            p.rho, p.gamma, cert.rho_min, cert.gamma_min
        ));
    }
    if trace.max_arrivals() >= cert.input.max_arrivals && cert.input.max_arrivals < p.workers {
        report.notes.push(format!(
            "trace has |A_k| = {} which is not below S = {}",
            trace.max_arrivals(),
            cert.input.max_arrivals
        ));
    }
    let d0 = deltas[0];
    for k in 0..trace.records.len() {
        let d = deltas[k + 1];
        let upper = (-((k + 1) as f64) * eta.ln()).exp() * d0 + slack.value;
        // The margin covers both the upper envelope and nonnegativity.
        let margin = (upper - d).min(d + slack.value);
        report.push_margin(k, d, upper, margin);
    }
    Ok(report)
}

/// Per-iteration descent inequality with `ε = 1/ρ`:
/// `Δ_{k+1} ≤ Δ_k + ((1+ρ²)/2) Σ_{A_k} ‖x_0^k - x_0^{k̄_i+1}‖²
///  - ((2γ+Nρ)/2) ‖x_0^{k+1} - x_0^k‖² + ((L² + (ε-1)ρ)/2 + L²/ρ) Σ_{A_k} ‖x_i^{k+1} - x_i^k‖²`.
pub fn check_descent_lemma(trace: &Trace, lipschitz: f64, slack: &Slack) -> Result<CheckReport> {
    let p = &trace.params;
    let (rho, gamma, n) = (p.rho, p.gamma, p.workers as f64);
    if rho < lipschitz {
        return Err(Error::Precondition(format!(
            "descent inequality needs ρ ≥ L, got ρ = {rho}, L = {lipschitz}"
        )));
    }
    let eps = 1.0 / rho;
    let l2 = lipschitz * lipschitz;
    let c_gap = (1.0 + rho / eps) / 2.0;
    let c_x0 = (2.0 * gamma + n * rho) / 2.0;
    let c_move = (l2 + (eps - 1.0) * rho) / 2.0 + l2 / rho;
    let deltas = trace.deltas()?;
    let mut report = CheckReport::new("descent", slack);
    for (k, rec) in trace.records.iter().enumerate() {
        if !rec.past_warmup() {
            report.skip(WARMUP_REASON);
            continue;
        }
        let mut gaps = 0.0;
        for &i in &rec.arrived {
            gaps += stale_gap(rec, i)?;
        }
        let moves = sum_over(rec.arrived.iter().copied(), |i| rec.move_sq[i]);
        let rhs = deltas[k] + c_gap * gaps - c_x0 * rec.x0_move_sq + c_move * moves;
        report.push(k, deltas[k + 1], rhs + slack.value);
    }
    Ok(report)
}

/// Consensus-error bound:
/// `Σ ‖x_i^{k+1} - x_0^{k+1}‖² ≤ (2L²/ρ²)[Σ_{A_k} moves + Σ_{A_k^c} prior moves]
///  + 4 Σ_{A_k} stale gaps + 4 Σ_{A_k^c} stale gaps + 4N ‖x_0^{k+1} - x_0^k‖²`.
pub fn check_consensus_bound(trace: &Trace, lipschitz: f64, slack: &Slack) -> Result<CheckReport> {
    let p = &trace.params;
    let (rho, n) = (p.rho, p.workers as f64);
    let c_move = 2.0 * lipschitz * lipschitz / (rho * rho);
    let mut report = CheckReport::new("consensus", slack);
    for (k, rec) in trace.records.iter().enumerate() {
        if !rec.past_warmup() {
            report.skip(WARMUP_REASON);
            continue;
        }
        let moves = sum_over(rec.arrived.iter().copied(), |i| rec.move_sq[i]);
        let mut prior = 0.0;
        for i in unarrived(rec) {
            prior += prior_move(rec, i)?;
        }
        let mut gaps = 0.0;
        for i in 0..rec.stale_gap_sq.len() {
            gaps += stale_gap(rec, i)?;
        }
        let rhs = c_move * (moves + prior) + 4.0 * gaps + 4.0 * n * rec.x0_move_sq;
        report.push(k, rec.consensus_err, rhs + slack.value);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelaySubset {
    /// `N_j = A_j` with `ν = τ`.
    Arrived,
    /// `N_j = A_j^c` with `ν = 2τ - 1`.
    Unarrived,
}

impl DelaySubset {
    pub fn nu(self, tau: usize) -> usize {
        match self {
            DelaySubset::Arrived => tau,
            DelaySubset::Unarrived => 2 * tau - 1,
        }
    }
}

/// Weighted delay inequality, checked on every prefix `k`:
/// `Σ_{j≤k} η^j Σ_{i∈N_j} ‖x_0^j - x_0^{j_i+1}‖²
///  ≤ (ν-1) N̄ Σ_{j<k} η^{j+1} ((η^{ν-1} - 1)/(η - 1)) ‖x_0^j - x_0^{j+1}‖²`.
///
/// `j_i + 1` is the `x_0` index worker `i`'s cached pair was computed against
/// (index 0 while the cache still holds the initialization). Both sides are
/// accumulated scaled by `η^{-k}` to stay finite on long traces.
pub fn check_weighted_delay_bound(
    trace: &Trace,
    eta: f64,
    nu: usize,
    subset: DelaySubset,
    n_bar: usize,
    slack: &Slack,
) -> Result<CheckReport> {
    if !(eta > 1.0) {
        return Err(Error::Precondition(format!(
            "weighted delay bound needs η > 1, got {eta}"
        )));
    }
    if nu < 1 {
        return Err(Error::Precondition("ν must be at least 1".into()));
    }
    // (η^{ν-1} - 1)/(η - 1) as a geometric sum to avoid cancellation near η = 1.
    let geom: f64 = (0..nu.saturating_sub(1)).map(|m| eta.powi(m as i32)).sum();
    let coef = (nu - 1) as f64 * n_bar as f64 * geom;
    let name = match subset {
        DelaySubset::Arrived => format!("weighted_delay_arrived_nu{nu}"),
        DelaySubset::Unarrived => format!("weighted_delay_unarrived_nu{nu}"),
    };
    let mut report = CheckReport::new(&name, slack);
    let hist = &trace.x0_history;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for (j, rec) in trace.records.iter().enumerate() {
        let members: Vec<usize> = match subset {
            DelaySubset::Arrived => rec.arrived.clone(),
            DelaySubset::Unarrived => unarrived(rec).collect(),
        };
        if members.len() > n_bar {
            return Err(Error::Precondition(format!(
                "iteration {j}: |N_j| = {} exceeds N̄ = {n_bar}",
                members.len()
            )));
        }
        let mut gaps = 0.0;
        for &i in &members {
            let basis = rec.basis[i].unwrap_or(0);
            // Requires j - ν ≤ j_i < j, i.e. j - ν + 1 ≤ basis ≤ j.
            if basis > j || basis + nu < j + 1 {
                return Err(Error::Precondition(format!(
                    "iteration {j}: worker {i} basis {basis} lies outside the window of ν = {nu}"
                )));
            }
            gaps += dist_sq(&hist[j], &hist[basis]);
        }
        if j > 0 {
            rhs = rhs / eta + coef * dist_sq(&hist[j - 1], &hist[j]);
        }
        lhs = lhs / eta + gaps;
        report.push(j, lhs, rhs + slack.value);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapBoundParams {
    pub lipschitz: f64,
    pub sigma2: f64,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hoffman: Option<f64>,
}

impl GapBoundParams {
    /// Smallest `δ` the bound admits for the given run parameters.
    pub fn smallest_delta(
        rho: f64,
        gamma: f64,
        workers: usize,
        sigma2: f64,
        hoffman: Option<f64>,
    ) -> f64 {
        let n = workers as f64;
        let s_eff = hoffman.map_or(sigma2, |c| sigma2 / c);
        if gamma > 0.0 {
            ((rho * n + gamma) / (n * s_eff) - 1.0).max(1.0)
        } else {
            (rho / s_eff - 1.0).max(1.0)
        }
    }
}

/// Upper bound on `Δ_{k+1}` by the movement and staleness terms of iteration `k`.
///
/// With `γ > 0`:
/// `Δ_{k+1}/(γδ) ≤ (L²/(4ρ²N))[Σ_A moves + Σ_{A^c} prior moves] +
/// (1/(2N))[Σ_A gaps + Σ_{A^c} gaps] + ‖x_0^{k+1} - x_0^k‖²`.
/// With `γ = 0` the left coefficient becomes `1/(4(ρ-σ²)Nδ)` (or
/// `1/(2N[2(ρ-σ²/c)δ + σ²])` with a Hoffman constant) and the right
/// coefficients double.
pub fn check_lagrangian_gap_bound(
    trace: &Trace,
    params: &GapBoundParams,
    slack: &Slack,
) -> Result<CheckReport> {
    let p = &trace.params;
    let (rho, gamma, n) = (p.rho, p.gamma, p.workers as f64);
    let GapBoundParams {
        lipschitz,
        sigma2,
        delta,
        hoffman,
    } = *params;
    if !(sigma2 > 0.0) {
        return Err(Error::Precondition(format!(
            "gap bound needs σ² > 0, got {sigma2}"
        )));
    }
    let s_eff = hoffman.map_or(sigma2, |c| sigma2 / c);
    let lhs_coef;
    let (c_move, c_gap);
    if gamma > 0.0 {
        let need_gamma = match hoffman {
            None => 8.0 * n * (rho - sigma2),
            Some(_) => 8.0 * n * (rho - s_eff) + 4.0 * n * sigma2,
        };
        if hoffman.is_none() && rho < sigma2 {
            return Err(Error::Precondition(format!(
                "gap bound needs ρ ≥ σ², got ρ = {rho}"
            )));
        }
        if gamma < need_gamma {
            return Err(Error::Precondition(format!(
                "gap bound needs γ ≥ {need_gamma}, got {gamma}"
            )));
        }
        let need_delta = ((rho * n + gamma) / (n * s_eff) - 1.0).max(1.0);
        if delta < need_delta * (1.0 - 1e-12) {
            return Err(Error::Precondition(format!(
                "gap bound needs δ ≥ {need_delta}, got {delta}"
            )));
        }
        lhs_coef = 1.0 / (gamma * delta);
        c_move = lipschitz * lipschitz / (4.0 * rho * rho * n);
        c_gap = 1.0 / (2.0 * n);
    } else {
        let need_delta = (rho / s_eff - 1.0).max(1.0);
        if delta < need_delta * (1.0 - 1e-12) {
            return Err(Error::Precondition(format!(
                "γ = 0 gap bound needs δ ≥ {need_delta}, got {delta}"
            )));
        }
        lhs_coef = match hoffman {
            None => {
                if rho <= sigma2 {
                    return Err(Error::Precondition(format!(
                        "γ = 0 gap bound needs ρ > σ², got ρ = {rho}"
                    )));
                }
                1.0 / (4.0 * (rho - sigma2) * n * delta)
            }
            Some(_) => 1.0 / (2.0 * n * (2.0 * (rho - s_eff) * delta + sigma2)),
        };
        c_move = lipschitz * lipschitz / (2.0 * rho * rho * n);
        c_gap = 1.0 / n;
    }
    let deltas = trace.deltas()?;
    let name = if gamma > 0.0 {
        "gap_bound"
    } else {
        "gap_bound_gamma0"
    };
    let mut report = CheckReport::new(name, slack);
    for (k, rec) in trace.records.iter().enumerate() {
        if !rec.past_warmup() {
            report.skip(WARMUP_REASON);
            continue;
        }
        let moves = sum_over(rec.arrived.iter().copied(), |i| rec.move_sq[i]);
        let mut prior = 0.0;
        for i in unarrived(rec) {
            prior += prior_move(rec, i)?;
        }
        let mut gaps = 0.0;
        for i in 0..rec.stale_gap_sq.len() {
            gaps += stale_gap(rec, i)?;
        }
        let rhs = c_move * (moves + prior) + c_gap * gaps + rec.x0_move_sq;
        report.push(k, lhs_coef * deltas[k + 1], rhs + slack.value);
    }
    Ok(report)
}
