//! Seeded synthetic problem generators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::LocalObjective;

use super::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub workers: usize,
    pub dim: usize,
    /// Smallest eigenvalue of every `Q_i` (the strong convexity modulus).
    pub eig_min: f64,
    /// Largest eigenvalue of every `Q_i` (the Lipschitz constant).
    pub eig_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticSpec {
    pub samples: usize,
    pub dim: usize,
    /// Probability of flipping each label.
    #[serde(default = "default_noise")]
    pub label_noise: f64,
}

fn default_noise() -> f64 {
    0.1
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix from the QR factors of a Gaussian matrix.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `f_i(x) = ½ xᵀQ_i x + q_iᵀx` with `Q_i = U_i diag(e) U_iᵀ`, where the
/// spectrum `e` contains both `eig_min` and `eig_max` (when `dim ≥ 2`) and
/// the rest is uniform in between; `q_i` is standard normal.
pub fn synthetic_quadratic(spec: &QuadraticSpec, seed: u64) -> Result<Vec<LocalObjective>> {
    let QuadraticSpec {
        workers,
        dim,
        eig_min,
        eig_max,
    } = *spec;
    if workers == 0 || dim == 0 {
        return Err(Error::InvalidProblem(
            "workers and dim must be positive".into(),
        ));
    }
    if !(eig_min > 0.0 && eig_max >= eig_min && eig_max.is_finite()) {
        return Err(Error::InvalidProblem(format!(
            "need 0 < eig_min ≤ eig_max, got [{eig_min}, {eig_max}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..workers)
        .map(|_| {
            let eigs = DVector::from_fn(dim, |j, _| match j {
                0 => eig_min,
                1 => eig_max,
                _ => rng.random_range(eig_min..=eig_max),
            });
            let u = random_orthogonal(&mut rng, dim);
            let q_mat = &u * DMatrix::from_diagonal(&eigs) * u.transpose();
            let q_mat = (&q_mat + q_mat.transpose()) * 0.5;
            let q = DVector::from_fn(dim, |_, _| rng.sample(StandardNormal));
            LocalObjective::quadratic(q_mat, q)
        })
        .collect()
}

/// Features `N(0, 1/dim)`, a standard normal ground-truth weight vector, and
/// labels `sign(aᵀw)` flipped independently with probability `label_noise`.
pub fn synthetic_logistic(spec: &LogisticSpec, seed: u64) -> Result<Dataset> {
    let LogisticSpec {
        samples,
        dim,
        label_noise,
    } = *spec;
    if samples == 0 || dim == 0 {
        return Err(Error::InvalidProblem(
            "samples and dim must be positive".into(),
        ));
    }
    if !(0.0..=0.5).contains(&label_noise) {
        return Err(Error::InvalidProblem(format!(
            "label_noise must lie in [0, 0.5], got {label_noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = gaussian_matrix(&mut rng, samples, dim) / (dim as f64).sqrt();
    let w: DVector<f64> = DVector::from_fn(dim, |_, _| rng.sample(StandardNormal));
    let margins = &features * &w;
    let labels = DVector::from_fn(samples, |i, _| {
        let y = if margins[i] >= 0.0 { 1.0 } else { -1.0 };
        if rng.random_bool(label_noise) {
            -y
        } else {
            y
        }
    });
    Dataset::new(features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn quadratic_spectrum_hits_both_ends() {
        let spec = QuadraticSpec {
            workers: 3,
            dim: 4,
            eig_min: 1.0,
            eig_max: 5.0,
        };
        for f in synthetic_quadratic(&spec, 11).unwrap() {
            let crate::problem::Family::Quadratic { q_mat, .. } = &f.family else {
                panic!("quadratic expected")
            };
            let e = SymmetricEigen::new(q_mat.clone()).eigenvalues;
            assert!((e.min() - 1.0).abs() < 1e-12);
            assert!((e.max() - 5.0).abs() < 1e-12);
            assert!((f.lipschitz - 5.0).abs() < 1e-8);
            assert!((f.strong_convexity - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn generators_are_seeded() {
        let spec = LogisticSpec {
            samples: 30,
            dim: 4,
            label_noise: 0.2,
        };
        assert_eq!(
            synthetic_logistic(&spec, 5).unwrap(),
            synthetic_logistic(&spec, 5).unwrap()
        );
        assert_ne!(
            synthetic_logistic(&spec, 5).unwrap(),
            synthetic_logistic(&spec, 6).unwrap()
        );
    }
}
