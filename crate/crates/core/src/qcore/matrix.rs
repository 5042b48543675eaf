//! Dense square complex matrices and the Hermitian operator newtype.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when checking `a[i][j] == conj(a[j][i])`.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dense `dim x dim` complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        Self {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("matrix dimension must be at least 1"));
        }
        if data.len() != dim * dim {
            return Err(Error::contract(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::contract("matrix rows must all have length equal to the row count"));
            }
            data.extend(row.iter().map(|&x| Complex64::new(x, 0.0)));
        }
        Self::from_row_major(dim, data)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `tr(self * rhs)` without forming the product.
    pub fn trace_product(&self, rhs: &Self) -> Complex64 {
        assert_eq!(self.dim, rhs.dim, "trace_product dimension mismatch");
        let n = self.dim;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * rhs.data[k * n + i];
            }
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "add dimension mismatch");
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// `self += s * rhs`.
    pub fn axpy(&mut self, s: f64, rhs: &Self) {
        assert_eq!(self.dim, rhs.dim, "axpy dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b * s;
        }
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &Self) -> Self {
        let (n, p) = (self.dim, rhs.dim);
        let d = n * p;
        let mut out = Self::zeros(d);
        for i in 0..n {
            for j in 0..n {
                let a = self.data[i * n + j];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for k in 0..p {
                    for l in 0..p {
                        out.data[(i * p + k) * d + j * p + l] = a * rhs.data[k * p + l];
                    }
                }
            }
        }
        out
    }

    /// Largest `|a[i][j] - conj(a[j][i])|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = (self.data[i * n + j] - self.data[j * n + i].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Largest elementwise modulus of `self - rhs`.
    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        assert_eq!(self.dim, rhs.dim);
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Replaces the matrix by `(A + A†)/2`.
    pub fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            let d = self.data[i * n + i];
            self.data[i * n + i] = Complex64::new(d.re, 0.0);
            for j in i + 1..n {
                let avg = (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5;
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg.conj();
            }
        }
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Serialized as nested rows of `[re, im]` pairs.
impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.dim)
            .map(|i| self.row(i).iter().map(|z| [z.re, z.im]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(serde::de::Error::custom("matrix must be square"));
            }
            data.extend(row.iter().map(|p| Complex64::new(p[0], p[1])));
        }
        ComplexMatrix::from_row_major(dim, data).map_err(serde::de::Error::custom)
    }
}

/// A self-adjoint matrix: an observable or a pseudo-Hamiltonian.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct HermitianOperator(ComplexMatrix);

impl HermitianOperator {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(matrix, HERMITIAN_TOL)
    }

    pub fn with_tolerance(matrix: ComplexMatrix, tol: f64) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFinite("operator has non-finite entries".into()));
        }
        let defect = matrix.hermiticity_defect();
        if defect > tol {
            return Err(Error::contract(format!(
                "matrix is not Hermitian (defect {defect:.3e} > {tol:.1e})"
            )));
        }
        Ok(Self(matrix))
    }

    /// Wraps a matrix after forcing exact Hermiticity.
    pub fn symmetrized(mut matrix: ComplexMatrix) -> Self {
        matrix.symmetrize();
        Self(matrix)
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::new(ComplexMatrix::from_real_rows(rows)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(ComplexMatrix::zeros(dim))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    #[inline]
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    /// Real linear combination `Σ coeffs[i] * ops[i]`.
    pub fn linear_combination(ops: &[HermitianOperator], coeffs: &[f64]) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::contract("linear combination of an empty operator list"));
        }
        if ops.len() != coeffs.len() {
            return Err(Error::contract(format!(
                "{} coefficients for {} operators",
                coeffs.len(),
                ops.len()
            )));
        }
        let mut acc = ComplexMatrix::zeros(ops[0].dim());
        for (op, &c) in ops.iter().zip(coeffs) {
            if op.dim() != acc.dim() {
                return Err(Error::contract("operators of differing dimension"));
            }
            if c != 0.0 {
                acc.axpy(c, op.matrix());
            }
        }
        Ok(Self(acc))
    }

    pub fn add_scaled(&mut self, s: f64, rhs: &HermitianOperator) {
        self.0.axpy(s, rhs.matrix());
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    pub fn square(&self) -> Self {
        Self::symmetrized(self.0.matmul(&self.0))
    }

    pub fn kron(&self, rhs: &HermitianOperator) -> Self {
        Self(self.0.kron(&rhs.0))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }
}

impl<'de> Deserialize<'de> for HermitianOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = ComplexMatrix::deserialize(d)?;
        HermitianOperator::new(m).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = ComplexMatrix::from_row_major(2, vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        let b = ComplexMatrix::from_row_major(2, vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, -1.0)])
            .unwrap();
        let p = a.matmul(&b);
        assert_eq!(p[(0, 0)], c(0.0, 1.0));
        assert_eq!(p[(0, 1)], c(2.0, 0.0));
        assert_eq!(p[(1, 0)], c(0.0, 0.0));
        assert_eq!(p[(1, 1)], c(2.0, 0.0));
        assert_eq!(a.trace_product(&b), p.trace());
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = ComplexMatrix::from_row_major(2, vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)])
            .unwrap();
        assert!(matches!(HermitianOperator::new(m), Err(Error::Contract(_))));
    }

    #[test]
    fn rejects_ragged_rows() {
        let rows: [&[f64]; 2] = [&[1.0, 0.0], &[0.0]];
        assert!(ComplexMatrix::from_real_rows(&rows).is_err());
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let k = ComplexMatrix::identity(2).kron(&ComplexMatrix::identity(3));
        assert_eq!(k, ComplexMatrix::identity(6));
    }

    #[test]
    fn json_round_trip() {
        let m = ComplexMatrix::from_row_major(2, vec![c(1.0, 0.0), c(0.5, -0.25), c(0.5, 0.25), c(-1.0, 0.0)])
            .unwrap();
        let h = HermitianOperator::new(m).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, "[[[1.0,0.0],[0.5,-0.25]],[[0.5,0.25],[-1.0,0.0]]]");
        let back: HermitianOperator = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
    }
}
