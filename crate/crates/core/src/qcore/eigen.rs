//! Spectral decomposition of Hermitian matrices.
//!
//! The matrix is reduced to a real symmetric tridiagonal form in two stages:
//! Householder reflections give a Hermitian tridiagonal matrix with complex
//! off-diagonals, then a diagonal unitary rotates those off-diagonals onto the
//! positive real axis. The tridiagonal problem is solved by the implicit QL
//! algorithm with Wilkinson-style shifts and the transformations are applied
//! back to recover the eigenvectors. Every step is sequential and branch-free
//! with respect to timing, so identical inputs give bit-identical outputs.

use num_complex::Complex64;

use super::matrix::{ComplexMatrix, HermitianOperator};
use crate::error::{Error, Result};

/// QL iterations allowed per eigenvalue before giving up.
pub const MAX_QL_ITERATIONS: usize = 100;

/// Eigenvalues in ascending order with matching orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    vectors: ComplexMatrix,
}

impl EigenSystem {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &ComplexMatrix {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        let n = self.dim();
        (0..n).map(|i| self.vectors[(i, k)]).collect()
    }

    /// `V diag(weights) V†`, assembled as an exactly Hermitian matrix.
    pub fn assemble(&self, weights: &[f64]) -> ComplexMatrix {
        let n = self.dim();
        assert_eq!(weights.len(), n);
        let v = self.vectors.as_slice();
        let active: Vec<usize> = (0..n).filter(|&k| weights[k] != 0.0).collect();
        let mut out = ComplexMatrix::zeros(n);
        let mut scaled = vec![Complex64::new(0.0, 0.0); active.len()];
        for i in 0..n {
            let row_i = &v[i * n..(i + 1) * n];
            for (s, &k) in scaled.iter_mut().zip(&active) {
                *s = row_i[k] * weights[k];
            }
            for j in i..n {
                let row_j = &v[j * n..(j + 1) * n];
                let mut acc = Complex64::new(0.0, 0.0);
                for (s, &k) in scaled.iter().zip(&active) {
                    acc += s * row_j[k].conj();
                }
                if i == j {
                    out[(i, i)] = Complex64::new(acc.re, 0.0);
                } else {
                    out[(i, j)] = acc;
                    out[(j, i)] = acc.conj();
                }
            }
        }
        out
    }

    /// `f(A) = V diag(f(λ)) V†`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let w: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        self.assemble(&w)
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.assemble(&self.values)
    }
}

/// Full spectral decomposition of a Hermitian operator.
pub fn herm_eig(h: &HermitianOperator) -> Result<EigenSystem> {
    let n = h.dim();
    let mut work = h.matrix().as_slice().to_vec();
    let tri = tridiagonalize(&mut work, n, true);
    let mut zt = vec![0.0; n * n];
    for i in 0..n {
        zt[i * n + i] = 1.0;
    }
    let mut d = tri.diag.clone();
    let mut e = tri.offdiag.clone();
    ql_implicit(&mut d, &mut e, Some(&mut zt))?;

    // W = D Z, then V = P_0 P_1 ... P_{n-2} W.
    let mut w = vec![Complex64::new(0.0, 0.0); n * n];
    for row in 0..n {
        let phase = tri.phases[row];
        for col in 0..n {
            w[row * n + col] = phase * zt[col * n + row];
        }
    }
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    for r in tri.reflectors.iter().rev() {
        apply_reflector(&mut w, n, r, &mut s);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let mut vectors = ComplexMatrix::zeros(n);
    for row in 0..n {
        for (new_col, &old_col) in order.iter().enumerate() {
            vectors[(row, new_col)] = w[row * n + old_col];
        }
    }
    Ok(EigenSystem { values, vectors })
}

/// Eigenvalues only, ascending. Cheaper than [`herm_eig`] by skipping the
/// eigenvector accumulation.
pub fn herm_eigvals(h: &HermitianOperator) -> Result<Vec<f64>> {
    let n = h.dim();
    let mut work = h.matrix().as_slice().to_vec();
    let tri = tridiagonalize(&mut work, n, false);
    let mut d = tri.diag;
    let mut e = tri.offdiag;
    ql_implicit(&mut d, &mut e, None)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

struct Reflector {
    /// Rows `offset..offset + u.len()` are touched.
    offset: usize,
    u: Vec<Complex64>,
    /// `2 / (u† u)`.
    h: f64,
}

struct Tridiagonal {
    diag: Vec<f64>,
    /// `offdiag[k]` couples `k` and `k + 1`; non-negative; last entry is 0.
    offdiag: Vec<f64>,
    phases: Vec<Complex64>,
    reflectors: Vec<Reflector>,
}

fn tridiagonalize(a: &mut [Complex64], n: usize, keep_reflectors: bool) -> Tridiagonal {
    let mut sub = vec![Complex64::new(0.0, 0.0); n];
    let mut reflectors = Vec::new();
    let mut p = vec![Complex64::new(0.0, 0.0); n];

    for k in 0..n.saturating_sub(1) {
        let r = n - k - 1;
        // Column k below the diagonal, read from row k via Hermiticity.
        let x: Vec<Complex64> = (0..r).map(|j| a[k * n + k + 1 + j].conj()).collect();
        let tail_sq: f64 = x[1..].iter().map(|z| z.norm_sqr()).sum();
        if tail_sq == 0.0 {
            sub[k] = x[0];
            continue;
        }
        let x0_abs = x[0].norm();
        let xnorm = (x0_abs * x0_abs + tail_sq).sqrt();
        let phase = if x0_abs == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            x[0] / x0_abs
        };
        let gamma = -phase * xnorm;
        let mut u = x;
        u[0] += phase * xnorm;
        let h = 1.0 / (xnorm * (xnorm + x0_abs));
        sub[k] = gamma;

        // B <- P B P on the trailing block, P = I - h u u†.
        let off = k + 1;
        for i in 0..r {
            let row = &a[(off + i) * n + off..(off + i) * n + n];
            let mut acc = Complex64::new(0.0, 0.0);
            for (b, uj) in row.iter().zip(&u) {
                acc += b * uj;
            }
            p[i] = acc * h;
        }
        let mut upp = Complex64::new(0.0, 0.0);
        for i in 0..r {
            upp += u[i].conj() * p[i];
        }
        let kk = 0.5 * h * upp.re;
        for i in 0..r {
            p[i] -= u[i] * kk;
        }
        for i in 0..r {
            let ui = u[i];
            let qi = p[i];
            let row = &mut a[(off + i) * n + off..(off + i) * n + n];
            for j in 0..r {
                row[j] -= ui * p[j].conj() + qi * u[j].conj();
            }
        }
        if keep_reflectors {
            reflectors.push(Reflector { offset: off, u, h });
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i].re).collect();
    let mut offdiag = vec![0.0; n];
    let mut phases = vec![Complex64::new(1.0, 0.0); n];
    for k in 0..n.saturating_sub(1) {
        let mag = sub[k].norm();
        offdiag[k] = mag;
        phases[k + 1] = if mag == 0.0 {
            phases[k]
        } else {
            phases[k] * (sub[k] / mag)
        };
    }
    Tridiagonal {
        diag,
        offdiag,
        phases,
        reflectors,
    }
}

fn apply_reflector(w: &mut [Complex64], n: usize, r: &Reflector, s: &mut [Complex64]) {
    s.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
    for (j, uj) in r.u.iter().enumerate() {
        let uc = uj.conj();
        let row = &w[(r.offset + j) * n..(r.offset + j + 1) * n];
        for (sc, x) in s.iter_mut().zip(row) {
            *sc += uc * x;
        }
    }
    for (j, uj) in r.u.iter().enumerate() {
        let f = uj * r.h;
        let row = &mut w[(r.offset + j) * n..(r.offset + j + 1) * n];
        for (x, sc) in row.iter_mut().zip(s.iter()) {
            *x -= f * sc;
        }
    }
}

/// Implicit QL on a real symmetric tridiagonal matrix. `zt` holds the
/// accumulated eigenvectors as rows (the transpose of the usual layout).
fn ql_implicit(d: &mut [f64], e: &mut [f64], mut zt: Option<&mut [f64]>) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        // e[n-1] == 0 guarantees m < n.
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::EigenNonConvergence {
                        cap: MAX_QL_ITERATIONS,
                        index: l,
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(z) = zt.as_deref_mut() {
                        let (lo, hi) = z.split_at_mut((i + 1) * n);
                        let zi = &mut lo[i * n..(i + 1) * n];
                        let zi1 = &mut hi[..n];
                        for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                            let hb = *b;
                            *b = s * *a + c * hb;
                            *a = c * *a - s * hb;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> HermitianOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ComplexMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        let m = m.add(&m.adjoint()).scale(0.5);
        HermitianOperator::new(m).unwrap()
    }

    fn orthonormality_defect(v: &ComplexMatrix) -> f64 {
        v.adjoint().matmul(v).max_abs_diff(&ComplexMatrix::identity(v.dim()))
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let es = herm_eig(&HermitianOperator::identity(3)).unwrap();
        assert_eq!(es.values(), &[1.0, 1.0, 1.0]);
        assert!(orthonormality_defect(es.vectors()) < 1e-14);
    }

    #[test]
    fn f13_spectrum() {
        let rows: [&[f64]; 3] = [&[1.0, 0.0, 0.0], &[0.0, -1.0, 0.0], &[0.0, 0.0, 0.0]];
        let es = herm_eig(&HermitianOperator::from_real_rows(&rows).unwrap()).unwrap();
        let v = es.values();
        assert!((v[0] + 1.0).abs() < 1e-15 && v[1].abs() < 1e-15 && (v[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_by_one_and_two_by_two() {
        let one = HermitianOperator::new(ComplexMatrix::from_diagonal(&[-2.5])).unwrap();
        let es = herm_eig(&one).unwrap();
        assert_eq!(es.values(), &[-2.5]);
        assert!((es.vectors()[(0, 0)].norm() - 1.0).abs() < 1e-15);

        // sigma_y has eigenvalues -1, 1.
        let y = ComplexMatrix::from_row_major(
            2,
            vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        let y = HermitianOperator::new(y).unwrap();
        let es = herm_eig(&y).unwrap();
        assert!((es.values()[0] + 1.0).abs() < 1e-15);
        assert!((es.values()[1] - 1.0).abs() < 1e-15);
        assert!(es.reconstruct().max_abs_diff(y.matrix()) < 1e-15);
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        for (n, seed) in [(3, 1), (8, 2), (17, 3), (32, 4), (64, 5)] {
            let h = random_hermitian(n, seed);
            let es = herm_eig(&h).unwrap();
            assert!(es.values().windows(2).all(|w| w[0] <= w[1]));
            assert!(orthonormality_defect(es.vectors()) < 1e-10, "n={n}");
            assert!(es.reconstruct().max_abs_diff(h.matrix()) < 1e-9, "n={n}");
            let vals = herm_eigvals(&h).unwrap();
            for (a, b) in vals.iter().zip(es.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_equation_holds_columnwise() {
        let h = random_hermitian(8, 42);
        let es = herm_eig(&h).unwrap();
        for k in 0..8 {
            let v = es.vector(k);
            for i in 0..8 {
                let hv: Complex64 = (0..8).map(|j| h.matrix()[(i, j)] * v[j]).sum();
                assert!((hv - v[i] * es.values()[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic() {
        let h = random_hermitian(16, 9);
        let a = herm_eig(&h).unwrap();
        let b = herm_eig(&h).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.vectors(), b.vectors());
    }

    #[test]
    fn degenerate_and_block_diagonal() {
        // Already tridiagonal with a zero coupling in the middle.
        let h = HermitianOperator::new(ComplexMatrix::from_diagonal(&[3.0, 1.0, 1.0, -2.0])).unwrap();
        let es = herm_eig(&h).unwrap();
        assert_eq!(es.values(), &[-2.0, 1.0, 1.0, 3.0]);
        assert!(es.reconstruct().max_abs_diff(h.matrix()) < 1e-15);
    }
}
