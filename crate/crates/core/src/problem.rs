//! Consensus problems: local objective families, the shared regularizer and
//! a centralized reference solver that supplies `F*`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{is_symmetric, power_iteration};

/// Smooth convex local cost `f_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `f(x) = ½ xᵀQx + qᵀx` with `Q` symmetric PSD.
    Quadratic {
        q_mat: DMatrix<f64>,
        q: DVector<f64>,
    },
    /// `f(x) = Σ_j log(1 + exp(-y_j a_jᵀx))`, rows of `a` are samples.
    Logistic { a: DMatrix<f64>, y: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalObjective {
    pub family: Family,
    /// Gradient Lipschitz constant `L_i`.
    pub lipschitz: f64,
    /// Strong convexity modulus `σ²` (zero when not strongly convex).
    pub strong_convexity: f64,
}

/// `log(1 + exp(-z))` without overflow.
#[inline]
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `1 / (1 + exp(z))` without overflow.
#[inline]
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

impl LocalObjective {
    /// Builds a quadratic local cost. `L = λ_max(Q)` and `σ² = λ_min(Q)` both
    /// come from a dense symmetric eigensolve.
    pub fn quadratic(q_mat: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        let n = q_mat.nrows();
        if n == 0 || q_mat.ncols() != n {
            return Err(Error::InvalidProblem(format!(
                "quadratic matrix must be square and non-empty, got {}x{}",
                q_mat.nrows(),
                q_mat.ncols()
            )));
        }
        check_dim(n, q.len())?;
        if !is_symmetric(&q_mat, 1e-12) {
            return Err(Error::InvalidProblem(
                "quadratic matrix is not symmetric".into(),
            ));
        }
        let eig = SymmetricEigen::new(q_mat.clone());
        let lambda_min = eig.eigenvalues.min();
        let scale = eig.eigenvalues.amax().max(1.0);
        if lambda_min < -1e-10 * scale {
            return Err(Error::InvalidProblem(format!(
                "quadratic matrix is not PSD (λ_min = {lambda_min:e})"
            )));
        }
        Ok(LocalObjective {
            family: Family::Quadratic { q_mat, q },
            lipschitz: eig.eigenvalues.max().max(0.0),
            strong_convexity: lambda_min.max(0.0),
        })
    }

    /// Builds a logistic local cost over the rows of `a`. Labels must be ±1.
    pub fn logistic(a: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidProblem(
                "logistic data matrix is empty".into(),
            ));
        }
        check_dim(a.nrows(), y.len())?;
        if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidProblem(format!("label {bad} is not ±1")));
        }
        let mut obj = LocalObjective {
            family: Family::Logistic { a, y },
            lipschitz: 0.0,
            strong_convexity: 0.0,
        };
        obj.lipschitz = obj.estimate_lipschitz()?;
        Ok(obj)
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            Family::Quadratic { q, .. } => q.len(),
            Family::Logistic { a, .. } => a.ncols(),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(match &self.family {
            Family::Quadratic { q_mat, q } => 0.5 * x.dot(&(q_mat * x)) + q.dot(x),
            Family::Logistic { a, y } => {
                let z = a * x;
                z.iter()
                    .zip(y.iter())
                    .map(|(zj, yj)| softplus_neg(yj * zj))
                    .sum()
            }
        })
    }

    /// `∇f_i(x)`. For the logistic family this is `-Aᵀ(y ⊙ s)` with
    /// `s_j = 1 / (1 + exp(y_j a_jᵀx))`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(match &self.family {
            Family::Quadratic { q_mat, q } => q_mat * x + q,
            Family::Logistic { a, y } => {
                let z = a * x;
                let w = DVector::from_iterator(
                    y.len(),
                    z.iter()
                        .zip(y.iter())
                        .map(|(zj, yj)| -yj * sigmoid_neg(yj * zj)),
                );
                a.tr_mul(&w)
            }
        })
    }

    /// Gradient Lipschitz constant by power iteration: `λ_max(Q)` or `λ_max(AᵀA)/4`.
    pub fn estimate_lipschitz(&self) -> Result<f64> {
        match &self.family {
            Family::Quadratic { q_mat, .. } => power_iteration(q_mat),
            Family::Logistic { a, .. } => Ok(power_iteration(&a.tr_mul(a))? / 4.0),
        }
    }
}

/// The shared non-smooth term `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    Zero,
    /// Indicator of the box `{x : |x_j| ≤ bound}`.
    Box {
        bound: f64,
    },
    /// `weight · ‖x‖₁`.
    L1 {
        weight: f64,
    },
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::Zero => Ok(()),
            Regularizer::Box { bound } if bound.is_finite() && bound > 0.0 => Ok(()),
            Regularizer::Box { bound } => Err(Error::InvalidProblem(format!(
                "box bound must be finite and positive, got {bound}"
            ))),
            Regularizer::L1 { weight } if weight.is_finite() && weight >= 0.0 => Ok(()),
            Regularizer::L1 { weight } => Err(Error::InvalidProblem(format!(
                "l1 weight must be nonnegative, got {weight}"
            ))),
        }
    }

    /// `h(x)`; the box indicator returns `f64::INFINITY` outside the box.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::Box { bound } => {
                if x.iter().all(|v| v.abs() <= bound) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// `argmin_u h(u) + (scale/2)‖u - v‖²`.
    pub fn prox(&self, v: &DVector<f64>, scale: f64) -> DVector<f64> {
        match *self {
            Regularizer::Zero => v.clone(),
            Regularizer::Box { bound } => v.map(|x| x.clamp(-bound, bound)),
            Regularizer::L1 { weight } => crate::prox::soft_threshold(v, weight / scale),
        }
    }

    /// Euclidean distance from `g` to the subdifferential `∂h(x)`;
    /// infinite when `x` is outside the domain of `h`.
    pub fn subgradient_distance(&self, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let per_coord = |j: usize| -> f64 {
            let (xj, gj) = (x[j], g[j]);
            match *self {
                Regularizer::Zero => gj.abs(),
                Regularizer::Box { bound } => {
                    if xj.abs() > bound {
                        f64::INFINITY
                    } else if xj == bound {
                        (-gj).max(0.0)
                    } else if xj == -bound {
                        gj.max(0.0)
                    } else {
                        gj.abs()
                    }
                }
                Regularizer::L1 { weight } => {
                    if xj > 0.0 {
                        (gj - weight).abs()
                    } else if xj < 0.0 {
                        (gj + weight).abs()
                    } else {
                        (gj.abs() - weight).max(0.0)
                    }
                }
            }
        };
        (0..x.len())
            .map(|j| per_coord(j).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// `min_x Σ_i f_i(x) + h(x)` in consensus form with one local cost per worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusProblem {
    dim: usize,
    locals: Vec<LocalObjective>,
    reg: Regularizer,
}

impl ConsensusProblem {
    pub fn new(locals: Vec<LocalObjective>, reg: Regularizer) -> Result<Self> {
        let first = locals
            .first()
            .ok_or_else(|| Error::InvalidProblem("at least one worker is required".into()))?;
        let dim = first.dim();
        if dim == 0 {
            return Err(Error::InvalidProblem("dimension must be at least 1".into()));
        }
        for obj in &locals {
            check_dim(dim, obj.dim())?;
        }
        reg.validate()?;
        Ok(Self { dim, locals, reg })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn workers(&self) -> usize {
        self.locals.len()
    }

    pub fn locals(&self) -> &[LocalObjective] {
        &self.locals
    }

    pub fn local(&self, i: usize) -> &LocalObjective {
        &self.locals[i]
    }

    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }

    /// Common Lipschitz constant `L = max_i L_i`.
    pub fn lipschitz(&self) -> f64 {
        self.locals.iter().map(|o| o.lipschitz).fold(0.0, f64::max)
    }

    /// Common strong convexity modulus `σ² = min_i σ_i²`.
    pub fn strong_convexity(&self) -> f64 {
        self.locals
            .iter()
            .map(|o| o.strong_convexity)
            .fold(f64::INFINITY, f64::min)
    }

    /// `Σ_i f_i(x) + h(x)`; infinite outside the domain of `h`.
    pub fn objective_value(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let h = self.reg.value(x);
        if h.is_infinite() {
            return Ok(f64::INFINITY);
        }
        let mut total = h;
        for obj in &self.locals {
            total += obj.value(x)?;
        }
        Ok(total)
    }

    pub fn smooth_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, x.len())?;
        let mut g = DVector::zeros(self.dim);
        for obj in &self.locals {
            g += obj.gradient(x)?;
        }
        Ok(g)
    }

    /// Centralized accelerated proximal gradient on `Σ f_i + h` until the
    /// gradient-mapping norm at the returned point is at most `tol`.
    pub fn solve_reference(&self, tol: f64) -> Result<ReferenceSolution> {
        self.solve_reference_capped(tol, 2_000_000)
    }

    pub fn solve_reference_capped(&self, tol: f64, max_iter: usize) -> Result<ReferenceSolution> {
        if !(tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {tol}"
            )));
        }
        let lip: f64 = self.locals.iter().map(|o| o.lipschitz).sum();
        let step = 1.0 / lip.max(1e-12);
        let mapping = |x: &DVector<f64>, g: &DVector<f64>| -> DVector<f64> {
            (x - self.reg.prox(&(x - g * step), 1.0 / step)) / step
        };

        let mut x = self.reg.prox(&DVector::zeros(self.dim), 1.0);
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut best = (f64::INFINITY, x.clone());
        for it in 0..max_iter {
            let gx = self.smooth_gradient(&x)?;
            let residual = mapping(&x, &gx).norm();
            if residual < best.0 {
                best = (residual, x.clone());
            }
            if residual <= tol {
                return Ok(ReferenceSolution {
                    f_star: self.objective_value(&x)?,
                    x_star: x,
                    tolerance: tol,
                    residual,
                    iterations: it,
                });
            }
            let gy = self.smooth_gradient(&y)?;
            let x_next = self.reg.prox(&(&y - gy * step), 1.0 / step);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // Gradient-based restart keeps the momentum from overshooting.
            let restart = (&y - &x_next).dot(&(&x_next - &x)) > 0.0;
            if restart {
                t = 1.0;
                y = x_next.clone();
            } else {
                y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
                t = t_next;
            }
            x = x_next;
        }
        let (residual, x_best) = best;
        let best = ReferenceSolution {
            f_star: self.objective_value(&x_best)?,
            x_star: x_best,
            tolerance: tol,
            residual,
            iterations: max_iter,
        };
        Err(Error::ReferenceNotConverged {
            iterations: max_iter,
            residual,
            best: Box::new(best),
        })
    }
}

/// High-accuracy centralized optimum used as the `F*` oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub tolerance: f64,
    /// Gradient-mapping norm at `x_star`.
    pub residual: f64,
    pub iterations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn identity_quadratic(n: usize, q: DVector<f64>) -> LocalObjective {
        LocalObjective::quadratic(DMatrix::identity(n, n), q).unwrap()
    }

    #[test]
    fn quadratic_identity_at_zero() {
        let obj = identity_quadratic(3, DVector::zeros(3));
        let p = ConsensusProblem::new(vec![obj], Regularizer::Zero).unwrap();
        assert_eq!(p.objective_value(&DVector::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn logistic_with_positive_margins_is_below_m_log2() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.7]);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let y = DVector::from_iterator(3, (&a * &x).iter().map(|z: &f64| z.signum()));
        let obj = LocalObjective::logistic(a, y).unwrap();
        let v = obj.value(&x).unwrap();
        assert!(v > 0.0 && v < 3.0 * std::f64::consts::LN_2);
    }

    #[test]
    fn objective_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut locals = Vec::new();
        let mut raw = Vec::new();
        for _ in 0..3 {
            let b = rand_mat(&mut rng, 3, 3);
            let q_mat = b.transpose() * &b;
            let q = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            raw.push((q_mat.clone(), q.clone()));
            locals.push(LocalObjective::quadratic(q_mat, q).unwrap());
        }
        let p = ConsensusProblem::new(locals, Regularizer::L1 { weight: 0.3 }).unwrap();
        let x = DVector::from_vec(vec![0.2, -1.3, 0.7]);
        let mut oracle = 0.0;
        for (q_mat, q) in &raw {
            for r in 0..3 {
                for c in 0..3 {
                    oracle += 0.5 * x[r] * q_mat[(r, c)] * x[c];
                }
                oracle += q[r] * x[r];
            }
        }
        oracle += 0.3 * (0.2 + 1.3 + 0.7);
        let v = p.objective_value(&x).unwrap();
        assert!((v - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn box_outside_is_infinite() {
        let p = ConsensusProblem::new(
            vec![identity_quadratic(2, DVector::zeros(2))],
            Regularizer::Box { bound: 1.0 },
        )
        .unwrap();
        let v = p
            .objective_value(&DVector::from_vec(vec![0.0, 1.5]))
            .unwrap();
        assert!(v.is_infinite() && v > 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let obj = identity_quadratic(3, DVector::zeros(3));
        let p = ConsensusProblem::new(vec![obj.clone()], Regularizer::Zero).unwrap();
        assert!(matches!(
            p.objective_value(&DVector::zeros(2)),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
        assert!(obj.gradient(&DVector::zeros(4)).is_err());
        let other = identity_quadratic(2, DVector::zeros(2));
        assert!(ConsensusProblem::new(vec![obj, other], Regularizer::Zero).is_err());
    }

    #[test]
    fn quadratic_gradient_identity() {
        let obj = identity_quadratic(3, DVector::zeros(3));
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(obj.gradient(&e1).unwrap(), e1);
    }

    #[test]
    fn logistic_gradient_at_zero_is_half_aty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_mat(&mut rng, 6, 3);
        let y = DVector::from_fn(6, |j, _| if j % 2 == 0 { 1.0 } else { -1.0 });
        let expected = -0.5 * a.tr_mul(&y);
        let obj = LocalObjective::logistic(a, y).unwrap();
        let g = obj.gradient(&DVector::zeros(3)).unwrap();
        assert!((g - expected).norm() < 1e-14);
    }

    #[test]
    fn lipschitz_examples() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let obj = LocalObjective::quadratic(q, DVector::zeros(2)).unwrap();
        assert!((obj.lipschitz - 4.0).abs() < 1e-8 * 4.0);
        assert!((obj.strong_convexity - 1.0).abs() < 1e-12);

        let obj = LocalObjective::logistic(DMatrix::identity(3, 3), DVector::from_element(3, 1.0))
            .unwrap();
        assert!((obj.lipschitz - 0.25).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let not_sym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(LocalObjective::quadratic(not_sym, DVector::zeros(2)).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(LocalObjective::quadratic(indefinite, DVector::zeros(2)).is_err());
        let bad_label = DVector::from_vec(vec![1.0, 0.0]);
        assert!(LocalObjective::logistic(DMatrix::identity(2, 2), bad_label).is_err());
        assert!(Regularizer::Box { bound: 0.0 }.validate().is_err());
        assert!(Regularizer::Box {
            bound: f64::INFINITY
        }
        .validate()
        .is_err());
        assert!(Regularizer::L1 { weight: -1.0 }.validate().is_err());
        assert!(ConsensusProblem::new(vec![], Regularizer::Zero).is_err());
    }

    #[test]
    fn reference_closed_form_quadratic() {
        let n_workers = 3;
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let locals = (0..n_workers)
            .map(|_| identity_quadratic(3, -e1.clone()))
            .collect();
        let p = ConsensusProblem::new(locals, Regularizer::Zero).unwrap();
        let sol = p.solve_reference(1e-10).unwrap();
        assert!((&sol.x_star - &e1).norm() < 1e-10);
        assert!((sol.f_star + n_workers as f64 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn reference_box_clamps_separable_minimizer() {
        let q = DVector::from_vec(vec![-5.0, 0.2, 3.0]);
        let p = ConsensusProblem::new(
            vec![identity_quadratic(3, q.clone())],
            Regularizer::Box { bound: 1.0 },
        )
        .unwrap();
        let sol = p.solve_reference(1e-10).unwrap();
        let expected = (-q).map(|v| v.clamp(-1.0, 1.0));
        assert!((sol.x_star - expected).norm() < 1e-10);
    }

    #[test]
    fn reference_cap_reports_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_mat(&mut rng, 10, 3);
        let y = DVector::from_fn(10, |j, _| if j % 3 == 0 { -1.0 } else { 1.0 });
        let p = ConsensusProblem::new(
            vec![LocalObjective::logistic(a, y).unwrap()],
            Regularizer::Box { bound: 10.0 },
        )
        .unwrap();
        match p.solve_reference_capped(1e-12, 3) {
            Err(Error::ReferenceNotConverged {
                iterations, best, ..
            }) => {
                assert_eq!(iterations, 3);
                assert!(best.f_star.is_finite());
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }
}
