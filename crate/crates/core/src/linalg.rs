//! Small dense linear-algebra helpers shared by the objective families.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative change in the Rayleigh quotient below which power iteration stops.
pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITERS: usize = 200_000;

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
///
/// Returns `0.0` for the zero matrix. The start vector is deterministic, so the
/// result is reproducible across runs. When the top two eigenvalues are too
/// close for power iteration to settle within the cap, the value comes from a
/// dense symmetric eigensolve instead.
pub fn power_iteration(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    // Uneven weights keep the start vector off any coordinate-aligned eigenspace.
    let mut v = DVector::from_fn(n, |j, _| 1.0 + (j as f64 + 1.0).sqrt() / (n as f64 + 1.0));
    v /= v.norm();
    let mut theta = 0.0;
    for it in 0..POWER_MAX_ITERS {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = v.dot(&w);
        v = w / norm;
        if it > 0 && (next - theta).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE) {
            // One more product from the converged vector tightens the estimate.
            let refined = v.dot(&(m * &v));
            return Ok(refined.max(next));
        }
        theta = next;
    }
    let top = SymmetricEigen::new(m.clone()).eigenvalues.max();
    if top.is_finite() {
        Ok(top.max(theta))
    } else {
        Err(Error::PowerIteration {
            iterations: POWER_MAX_ITERS,
        })
    }
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

#[inline]
pub fn dist_sq(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let l = power_iteration(&m).unwrap();
        assert!((l - 4.0).abs() < 1e-8 * 4.0);
    }

    #[test]
    fn power_iteration_zero_matrix() {
        assert_eq!(power_iteration(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_check() {
        let mut m = DMatrix::identity(3, 3);
        assert!(is_symmetric(&m, 1e-12));
        m[(0, 2)] = 0.5;
        assert!(!is_symmetric(&m, 1e-12));
    }
}
