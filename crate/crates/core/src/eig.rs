//! Dominant eigenvalue of a dense real matrix.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense Schur solve up to this size; orthogonal iteration above.
pub const DENSE_LIMIT: usize = 700;

/// All eigenvalues via the real Schur form, or `None` if QR fails.
pub fn eigenvalues(a: &DMatrix<f64>) -> Option<Vec<Complex64>> {
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000 * a.nrows().max(1))?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

fn max_modulus(values: &[Complex64]) -> Option<Complex64> {
    values
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
}

/// Orthogonal (subspace) iteration with Rayleigh-Ritz on a block of `k`
/// vectors; deterministic start.
pub fn dominant_by_subspace(a: &DMatrix<f64>, k: usize, max_iter: usize, tol: f64) -> Option<Complex64> {
    let n = a.nrows();
    let k = k.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut q = DMatrix::from_fn(n, k, |_, _| rng.gen::<f64>() - 0.5).qr().q();
    let mut last = Complex64::new(f64::NAN, 0.0);
    for _ in 0..max_iter {
        let z = a * &q;
        q = z.qr().q();
        let ritz = q.transpose() * a * &q;
        let mu = max_modulus(&eigenvalues(&ritz)?)?;
        if (mu.norm() - last.norm()).abs() <= tol * mu.norm().max(1e-300) {
            return Some(mu);
        }
        last = mu;
    }
    Some(last)
}

/// Eigenvalue of largest modulus.
pub fn dominant_eigenvalue(a: &DMatrix<f64>) -> Option<Complex64> {
    if a.nrows() <= DENSE_LIMIT {
        max_modulus(&eigenvalues(a)?)
    } else {
        dominant_by_subspace(a, 12, 2000, 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        let id = DMatrix::<f64>::identity(5, 5);
        assert!((dominant_eigenvalue(&id).unwrap() - 1.0).norm() < 1e-14);
        let mut d = DMatrix::<f64>::zeros(6, 6);
        for (i, v) in [0.5, 0.2, 0.1, -0.05, 0.0, 0.3].iter().enumerate() {
            d[(i, i)] = *v;
        }
        assert!((dominant_eigenvalue(&d).unwrap().re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rotation_block_has_complex_dominant() {
        let mut a = DMatrix::<f64>::zeros(3, 3);
        a[(0, 0)] = 0.0;
        a[(0, 1)] = -0.9;
        a[(1, 0)] = 0.9;
        a[(2, 2)] = 0.3;
        let mu = dominant_eigenvalue(&a).unwrap();
        assert!((mu.norm() - 0.9).abs() < 1e-12 && mu.im.abs() > 0.8);
    }

    #[test]
    fn subspace_agrees_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 60;
        let mut a = DMatrix::from_fn(n, n, |_, _| 0.05 * (rng.gen::<f64>() - 0.5));
        a[(3, 3)] = 0.95;
        let dense = dominant_eigenvalue(&a).unwrap();
        let iter = dominant_by_subspace(&a, 8, 5000, 1e-13).unwrap();
        assert!((dense.norm() - iter.norm()).abs() < 1e-8);
    }
}
