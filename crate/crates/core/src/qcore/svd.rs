//! Singular values by one-sided Jacobi rotations.
//!
//! Columns are orthogonalized pairwise until every pair is orthogonal to
//! working precision; the singular values are then the column norms. Small
//! singular values come out with absolute error near `ε·σ_max`, unlike the
//! square roots of Gram-matrix eigenvalues, which only reach `sqrt(ε)·σ_max`.

use num_complex::Complex64;

use super::matrix::ComplexMatrix;
use crate::error::{Error, Result};

pub const MAX_JACOBI_SWEEPS: usize = 60;

/// Singular values in descending order.
pub fn singular_values(m: &ComplexMatrix) -> Result<Vec<f64>> {
    let n = m.dim();
    // Column-major copy so each column is contiguous.
    let mut cols: Vec<Vec<Complex64>> = (0..n).map(|j| (0..n).map(|i| m[(i, j)]).collect()).collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| c.iter().map(Complex64::norm_sqr).sum()).collect();

    let mut converged = n < 2;
    for _ in 0..MAX_JACOBI_SWEEPS {
        if converged {
            break;
        }
        converged = true;
        // Exact norms once per sweep; rotations update them in between.
        for (norm, col) in norms.iter_mut().zip(&cols) {
            *norm = col.iter().map(Complex64::norm_sqr).sum();
        }
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta) = (norms[p], norms[q]);
                let gamma: Complex64 = cols[p].iter().zip(&cols[q]).map(|(a, b)| a.conj() * b).sum();
                let g = gamma.norm();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                // Rotate column q by the phase of gamma, then a real rotation.
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
                    let bq = *b * phase.conj();
                    let ap = *a;
                    *a = ap * c - bq * s;
                    *b = ap * s + bq * c;
                }
                norms[p] = (alpha - t * g).max(0.0);
                norms[q] = (beta + t * g).max(0.0);
            }
        }
    }
    if !converged {
        return Err(Error::NumericalIntegrity(format!(
            "Jacobi SVD did not converge in {MAX_JACOBI_SWEEPS} sweeps"
        )));
    }
    let mut values: Vec<f64> = cols.iter().map(|c| c.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{herm_eigvals, HermitianOperator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        let data = (0..n * n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexMatrix::from_row_major(n, data).unwrap()
    }

    #[test]
    fn phased_diagonal() {
        let mut m = ComplexMatrix::zeros(3);
        m[(0, 0)] = Complex64::new(0.0, -2.0);
        m[(1, 1)] = Complex64::new(0.5, 0.0);
        m[(2, 2)] = Complex64::from_polar(3.0, 1.1);
        let s = singular_values(&m).unwrap();
        for (a, b) in s.iter().zip([3.0, 2.0, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_gram_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [1, 2, 5, 16, 40] {
            let a = random_matrix(n, &mut rng);
            let s = singular_values(&a).unwrap();
            let gram = HermitianOperator::symmetrized(a.adjoint().matmul(&a));
            let mut oracle: Vec<f64> = herm_eigvals(&gram).unwrap().into_iter().map(|x| x.max(0.0).sqrt()).collect();
            oracle.reverse();
            for (x, y) in s.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-10 * oracle[0], "n={n}: {x} vs {y}");
            }
            let adj = singular_values(&a.adjoint()).unwrap();
            for (x, y) in s.iter().zip(&adj) {
                assert!((x - y).abs() < 1e-13 * s[0]);
            }
        }
    }

    #[test]
    fn resolves_tiny_values() {
        // U diag(1, 1e-12, 0) V with unitary factors built from random
        // Hermitian eigenvectors.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mk = |rng: &mut ChaCha8Rng| {
            let r = random_matrix(3, rng);
            crate::qcore::herm_eig(&HermitianOperator::symmetrized(r.add(&r.adjoint()))).unwrap().vectors().clone()
        };
        let (u, v) = (mk(&mut rng), mk(&mut rng));
        let m = u.matmul(&ComplexMatrix::from_diagonal(&[1.0, 1e-12, 0.0])).matmul(&v.adjoint());
        let s = singular_values(&m).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-14);
        assert!((s[1] - 1e-12).abs() < 1e-15);
        assert!(s[2] < 1e-15);
    }
}
