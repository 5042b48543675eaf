//! Observable sets: the two qutrit triples used in the photonic experiment,
//! nearest-neighbour Pauli sets on a qubit chain, and seeded random
//! Hermitian ensembles.

use std::collections::HashSet;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{herm_eigvals, ComplexMatrix, HermitianOperator};

pub const OPSET_FORMAT: &str = "opset-v1";

/// An ordered list of observables sharing one Hilbert-space dimension.
///
/// The order is significant: measurement vectors and parameter vectors are
/// positional with respect to it.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSet {
    dim: usize,
    ops: Vec<HermitianOperator>,
    labels: Vec<String>,
}

impl OperatorSet {
    pub fn new(ops: Vec<HermitianOperator>, labels: Vec<String>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::contract("operator set must contain at least one operator"));
        }
        if ops.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} operators but {} labels",
                ops.len(),
                labels.len()
            )));
        }
        let dim = ops[0].dim();
        if let Some(bad) = ops.iter().position(|op| op.dim() != dim) {
            return Err(Error::contract(format!(
                "operator {bad} has dimension {} but the set has dimension {dim}",
                ops[bad].dim()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::contract(format!("duplicate operator label {l:?}")));
            }
        }
        Ok(Self { dim, ops, labels })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of observables `m`.
    #[inline]
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[HermitianOperator] {
        &self.ops
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> &HermitianOperator {
        &self.ops[i]
    }

    /// A new set with `op` appended under `label`.
    pub fn with_operator(&self, op: HermitianOperator, label: impl Into<String>) -> Result<Self> {
        let mut ops = self.ops.clone();
        let mut labels = self.labels.clone();
        ops.push(op);
        labels.push(label.into());
        Self::new(ops, labels)
    }

    /// `Σ coeffs[i] F_i`.
    pub fn combine(&self, coeffs: &[f64]) -> Result<HermitianOperator> {
        if coeffs.len() != self.len() {
            return Err(Error::contract(format!(
                "parameter vector has length {} but the operator set has {} members",
                coeffs.len(),
                self.len()
            )));
        }
        HermitianOperator::linear_combination(&self.ops, coeffs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&OpsetDoc {
            format: OPSET_FORMAT.to_string(),
            dim: self.dim,
            labels: self.labels.clone(),
            ops: self.ops.clone(),
        })
        .expect("operator set serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: OpsetDoc = serde_json::from_str(s).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        if doc.format != OPSET_FORMAT {
            return Err(Error::parse(1, format!("unsupported operator-set format {:?}", doc.format)));
        }
        let set = Self::new(doc.ops, doc.labels)?;
        if set.dim != doc.dim {
            return Err(Error::parse(1, format!("declared dim {} but operators are {}x{}", doc.dim, set.dim, set.dim)));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[derive(Serialize, Deserialize)]
struct OpsetDoc {
    format: String,
    dim: usize,
    labels: Vec<String>,
    ops: Vec<HermitianOperator>,
}

fn real_op(rows: [[f64; 3]; 3]) -> HermitianOperator {
    let r: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    HermitianOperator::from_real_rows(&r).expect("builtin operator is Hermitian")
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// The first qutrit triple `{F11, F12, F13}`.
pub fn builtin_f1() -> OperatorSet {
    let ops = vec![
        real_op([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
        real_op([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        real_op([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 0.0]]),
    ];
    OperatorSet::new(ops, labels(&["F11", "F12", "F13"])).unwrap()
}

/// The second qutrit triple `{F21, F22, F23}`.
pub fn builtin_f2() -> OperatorSet {
    let ops = vec![
        real_op([[2.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]),
        real_op([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        real_op([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]),
    ];
    OperatorSet::new(ops, labels(&["F21", "F22", "F23"])).unwrap()
}

/// Single-qubit Pauli matrix: 0 = I, 1 = X, 2 = Y, 3 = Z.
pub fn pauli(index: usize) -> HermitianOperator {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let data = match index {
        0 => vec![one, z, z, one],
        1 => vec![z, one, one, z],
        2 => vec![z, -i, i, z],
        3 => vec![one, z, z, -one],
        _ => panic!("Pauli index must be 0..=3, got {index}"),
    };
    HermitianOperator::new(ComplexMatrix::from_row_major(2, data).unwrap()).unwrap()
}

const PAULI_NAMES: [char; 4] = ['I', 'X', 'Y', 'Z'];

/// Tensor product of per-site Paulis; site 0 is the leftmost factor.
fn pauli_string(sites: &[usize]) -> HermitianOperator {
    let mut acc = pauli(sites[0]);
    for &p in &sites[1..] {
        acc = acc.kron(&pauli(p));
    }
    acc
}

/// Non-identity Paulis on every site of an `n`-qubit open chain, followed by
/// every product of two non-identity Paulis on each nearest-neighbour bond.
///
/// Order: the `3n` single-site terms (site-major, then X, Y, Z), then the
/// `9(n-1)` bond terms (bond-major, then left Pauli, then right Pauli).
/// Labels read like `X0` or `Y2Z3`.
pub fn pauli_lattice(n: usize) -> Result<OperatorSet> {
    if n < 2 {
        return Err(Error::contract(format!("a Pauli lattice needs at least 2 qubits, got {n}")));
    }
    let mut ops = Vec::with_capacity(3 * n + 9 * (n - 1));
    let mut names = Vec::with_capacity(ops.capacity());
    for site in 0..n {
        for p in 1..=3 {
            let mut s = vec![0; n];
            s[site] = p;
            ops.push(pauli_string(&s));
            names.push(format!("{}{site}", PAULI_NAMES[p]));
        }
    }
    for bond in 0..n - 1 {
        for a in 1..=3 {
            for b in 1..=3 {
                let mut s = vec![0; n];
                s[bond] = a;
                s[bond + 1] = b;
                ops.push(pauli_string(&s));
                names.push(format!("{}{bond}{}{}", PAULI_NAMES[a], PAULI_NAMES[b], bond + 1));
            }
        }
    }
    OperatorSet::new(ops, names)
}

/// `m` Hermitian matrices `(M + M†)/2` with i.i.d. standard complex Gaussian
/// entries, each scaled to unit spectral norm.
pub fn random_hermitian_set(d: usize, m: usize, seed: u64) -> Result<OperatorSet> {
    if d < 2 {
        return Err(Error::contract(format!("random operator dimension must be at least 2, got {d}")));
    }
    if m < 1 {
        return Err(Error::contract("random operator count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Real and imaginary parts each carry half the unit variance.
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
    let mut ops = Vec::with_capacity(m);
    for _ in 0..m {
        let mut raw = ComplexMatrix::zeros(d);
        for z in raw.as_mut_slice() {
            *z = Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
        let herm = HermitianOperator::symmetrized(raw.add(&raw.adjoint()).scale(0.5));
        let spec = herm_eigvals(&herm)?;
        let norm = spec[0].abs().max(spec[d - 1].abs());
        ops.push(HermitianOperator::symmetrized(herm.into_matrix().scale(1.0 / norm)));
    }
    let names = (0..m).map(|i| format!("R{}", i + 1)).collect();
    OperatorSet::new(ops, names)
}

/// Parses an operator-set selector: `f1`, `f2` (or `builtin_f1`, `builtin_f2`),
/// `pauli:<n>`, `random:<d>,<m>,<seed>` or `file:<path>`.
pub fn from_selector(selector: &str) -> Result<OperatorSet> {
    let s = selector.trim();
    match s {
        "f1" | "builtin_f1" => return Ok(builtin_f1()),
        "f2" | "builtin_f2" => return Ok(builtin_f2()),
        _ => {}
    }
    let bad = || Error::contract(format!("malformed operator-set selector {selector:?}"));
    if let Some(rest) = s.strip_prefix("pauli:") {
        let n: usize = rest.trim().parse().map_err(|_| bad())?;
        return pauli_lattice(n);
    }
    if let Some(rest) = s.strip_prefix("random:") {
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let d: usize = parts[0].parse().map_err(|_| bad())?;
        let m: usize = parts[1].parse().map_err(|_| bad())?;
        let seed: u64 = parts[2].parse().map_err(|_| bad())?;
        return random_hermitian_set(d, m, seed);
    }
    if let Some(path) = s.strip_prefix("file:") {
        return OperatorSet::load(Path::new(path));
    }
    Err(bad())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::herm_eig;

    fn re(op: &HermitianOperator, i: usize, j: usize) -> f64 {
        op.matrix()[(i, j)].re
    }

    #[test]
    fn f1_entries() {
        let f = builtin_f1();
        assert_eq!(f.labels(), &["F11", "F12", "F13"]);
        assert_eq!(re(f.get(0), 0, 1), 1.0);
        let diag: Vec<f64> = (0..3).map(|i| re(f.get(2), i, i)).collect();
        assert_eq!(diag, vec![1.0, -1.0, 0.0]);
        for op in f.ops() {
            assert_eq!(op.matrix().hermiticity_defect(), 0.0);
            assert_eq!(op.trace(), 0.0);
        }
    }

    #[test]
    fn f2_entries() {
        let f = builtin_f2();
        assert_eq!(re(f.get(0), 0, 0), 2.0);
        let f23 = f.get(2);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if (i, j) == (2, 2) { 2.0 } else { 0.0 };
                assert_eq!(f23.matrix()[(i, j)], Complex64::new(expect, 0.0));
            }
        }
        assert_eq!(f.get(1), builtin_f1().get(1));
    }

    #[test]
    fn pauli_lattice_counts() {
        for n in 2..=6 {
            assert_eq!(pauli_lattice(n).unwrap().len(), 3 * n + 9 * (n - 1));
        }
        assert_eq!(pauli_lattice(5).unwrap().len(), 51);
        assert_eq!(pauli_lattice(2).unwrap().len(), 15);
        assert!(matches!(pauli_lattice(1), Err(Error::Contract(_))));
    }

    #[test]
    fn pauli_members_square_to_identity() {
        let set = pauli_lattice(3).unwrap();
        assert_eq!(set.dim(), 8);
        let id = ComplexMatrix::identity(8);
        for op in set.ops() {
            assert!(op.matrix().matmul(op.matrix()).max_abs_diff(&id) < 1e-15);
            assert!(op.trace().abs() < 1e-15);
        }
        assert_eq!(&set.labels()[..4], &["X0", "Y0", "Z0", "X1"]);
        assert_eq!(set.labels()[9], "X0X1");
        assert_eq!(set.labels()[26], "Z1Z2");
    }

    #[test]
    fn pauli_ordering_matches_kron_convention() {
        // Z on site 0 of two qubits is diag(1, 1, -1, -1).
        let set = pauli_lattice(2).unwrap();
        let z0 = set.get(2);
        let diag: Vec<f64> = (0..4).map(|i| re(z0, i, i)).collect();
        assert_eq!(diag, vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn random_set_is_hermitian_normalized_and_seeded() {
        let a = random_hermitian_set(16, 3, 7).unwrap();
        let b = random_hermitian_set(16, 3, 7).unwrap();
        let c = random_hermitian_set(16, 3, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for op in a.ops() {
            assert!(op.matrix().hermiticity_defect() <= 1e-12);
            let es = herm_eig(op).unwrap();
            let v = es.values();
            let norm = v[0].abs().max(v[v.len() - 1].abs());
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn set_invariants_enforced() {
        let f = builtin_f1();
        assert!(OperatorSet::new(vec![], vec![]).is_err());
        assert!(OperatorSet::new(f.ops().to_vec(), labels(&["a", "a", "b"])).is_err());
        let mixed = vec![f.get(0).clone(), pauli(1)];
        assert!(OperatorSet::new(mixed, labels(&["a", "b"])).is_err());
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let set = random_hermitian_set(4, 2, 1).unwrap();
        let s = set.to_json();
        assert!(s.starts_with("{\"format\":\"opset-v1\""));
        assert_eq!(OperatorSet::from_json(&s).unwrap(), set);
        let wrong = s.replace("opset-v1", "opset-v9");
        assert!(matches!(OperatorSet::from_json(&wrong), Err(Error::Parse { .. })));
    }

    #[test]
    fn selectors() {
        assert_eq!(from_selector("f1").unwrap(), builtin_f1());
        assert_eq!(from_selector("builtin_f2").unwrap(), builtin_f2());
        assert_eq!(from_selector("pauli:3").unwrap().len(), 27);
        assert_eq!(from_selector("random:8,3,5").unwrap(), random_hermitian_set(8, 3, 5).unwrap());
        assert!(from_selector("pauli:x").is_err());
        assert!(from_selector("random:8,3").is_err());
        assert!(from_selector("nonsense").is_err());
    }
}
