use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::eigen::{herm_eig, herm_eigvals, EigenSystem};
use super::matrix::{ComplexMatrix, HermitianOperator, HERMITIAN_TOL};
use super::svd::singular_values;
use crate::error::{Error, Result};
use crate::opsets::OperatorSet;

/// Numerical tolerances shared by the state-level operations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub hermitian: f64,
    pub trace: f64,
    /// Most negative eigenvalue still treated as zero.
    pub psd: f64,
    /// Largest imaginary part of `tr(ρF)` that is silently dropped.
    pub imaginary: f64,
    /// Smallest top spectral gap accepted as a unique ground state.
    pub ground_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermitian: HERMITIAN_TOL,
            trace: 1e-10,
            psd: 1e-10,
            imaginary: 1e-10,
            ground_gap: 1e-9,
        }
    }
}

/// A Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        Self::with_tolerances(matrix, &Tolerances::default())
    }

    pub fn with_tolerances(matrix: ComplexMatrix, tol: &Tolerances) -> Result<Self> {
        let herm = HermitianOperator::with_tolerance(matrix, tol.hermitian)?;
        let tr = herm.trace();
        if (tr - 1.0).abs() > tol.trace {
            return Err(Error::contract(format!("density matrix trace is {tr}, expected 1")));
        }
        let lo = herm_eigvals(&herm)?[0];
        if lo < -tol.psd {
            return Err(Error::contract(format!(
                "density matrix has negative eigenvalue {lo:.3e}"
            )));
        }
        Ok(Self(herm.into_matrix()))
    }

    /// For matrices that are density matrices by construction.
    pub(crate) fn from_trusted(matrix: ComplexMatrix) -> Self {
        Self(matrix)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim).scale(1.0 / dim as f64))
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) vector.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm_sq: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if psi.is_empty() || !(norm_sq > 0.0) || !norm_sq.is_finite() {
            return Err(Error::contract("pure state vector must be non-zero and finite"));
        }
        let n = psi.len();
        let mut m = ComplexMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = psi[i] * psi[j].conj() / norm_sq;
            }
        }
        m.symmetrize();
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn as_operator(&self) -> HermitianOperator {
        HermitianOperator::symmetrized(self.0.clone())
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = ComplexMatrix::deserialize(d)?;
        DensityMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// Spectral data of `exp(H)/tr exp(H)`: the eigen-system of `H` and the
/// Boltzmann weights over its eigenvalues.
#[derive(Clone, Debug)]
pub struct ThermalSpectrum {
    pub eigen: EigenSystem,
    pub weights: Vec<f64>,
}

impl ThermalSpectrum {
    pub fn of(h: &HermitianOperator) -> Result<Self> {
        let eigen = herm_eig(h)?;
        let weights = boltzmann_weights(eigen.values())?;
        Ok(Self { eigen, weights })
    }

    pub fn state(&self) -> DensityMatrix {
        DensityMatrix::from_trusted(self.eigen.assemble(&self.weights))
    }
}

/// Normalized `exp(λ_k - λ_max)`.
fn boltzmann_weights(values: &[f64]) -> Result<Vec<f64>> {
    let top = values[values.len() - 1];
    if !top.is_finite() {
        return Err(Error::NonFinite("pseudo-Hamiltonian has non-finite spectrum".into()));
    }
    let mut w: Vec<f64> = values.iter().map(|&v| (v - top).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    Ok(w)
}

/// `exp(H)/tr exp(H)` for a Hermitian `H`.
pub fn gibbs_state(h: &HermitianOperator) -> Result<DensityMatrix> {
    Ok(ThermalSpectrum::of(h)?.state())
}

/// `exp(Σ θ_i F_i) / tr exp(Σ θ_i F_i)`.
pub fn thermal_state(f_set: &OperatorSet, theta: &[f64]) -> Result<DensityMatrix> {
    gibbs_state(&f_set.combine(theta)?)
}

/// Purity gap of the thermal state, from the spectrum of `Σ θ_i F_i` alone.
pub fn thermal_purity_gap(f_set: &OperatorSet, theta: &[f64]) -> Result<f64> {
    let values = herm_eigvals(&f_set.combine(theta)?)?;
    let w = boltzmann_weights(&values)?;
    Ok((1.0 - w[w.len() - 1]).max(0.0))
}

pub fn expectation(rho: &DensityMatrix, f: &HermitianOperator) -> Result<f64> {
    expectation_with(rho, f, &Tolerances::default())
}

/// `Re tr(ρF)`; fails if the imaginary part exceeds tolerance.
pub fn expectation_with(rho: &DensityMatrix, f: &HermitianOperator, tol: &Tolerances) -> Result<f64> {
    if rho.dim() != f.dim() {
        return Err(Error::contract(format!(
            "state dimension {} does not match operator dimension {}",
            rho.dim(),
            f.dim()
        )));
    }
    let t = rho.matrix().trace_product(f.matrix());
    if t.im.abs() > tol.imaginary {
        return Err(Error::NumericalIntegrity(format!(
            "tr(ρF) has imaginary part {:.3e}",
            t.im
        )));
    }
    Ok(t.re)
}

/// Measurement noise added by the forward model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// `c_i + N(0, sigma²)`.
    Additive { sigma: f64 },
    /// `c_i (1 + N(0, s_i²))`; a single entry applies to every observable.
    Multiplicative { rel_sigma: Vec<f64> },
}

impl NoiseSpec {
    fn perturb<R: Rng + ?Sized>(&self, c: &mut [f64], rng: &mut R) -> Result<()> {
        match self {
            NoiseSpec::Additive { sigma } => {
                let n = Normal::new(0.0, *sigma)
                    .map_err(|e| Error::contract(format!("invalid noise sigma: {e}")))?;
                for x in c.iter_mut() {
                    *x += n.sample(rng);
                }
            }
            NoiseSpec::Multiplicative { rel_sigma } => {
                if rel_sigma.len() != 1 && rel_sigma.len() != c.len() {
                    return Err(Error::contract(format!(
                        "{} relative noise levels for {} observables",
                        rel_sigma.len(),
                        c.len()
                    )));
                }
                for (i, x) in c.iter_mut().enumerate() {
                    let s = if rel_sigma.len() == 1 { rel_sigma[0] } else { rel_sigma[i] };
                    let n = Normal::new(0.0, s)
                        .map_err(|e| Error::contract(format!("invalid noise sigma: {e}")))?;
                    *x *= 1.0 + n.sample(rng);
                }
            }
        }
        Ok(())
    }
}

/// Forward model: `c_i = tr(ρF_i) + ε_i`. The generator is only consumed
/// when `noise` is present.
pub fn measure<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    f_set: &OperatorSet,
    noise: Option<&NoiseSpec>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut c = f_set
        .ops()
        .iter()
        .map(|f| expectation(rho, f))
        .collect::<Result<Vec<_>>>()?;
    if let Some(noise) = noise {
        noise.perturb(&mut c, rng)?;
    }
    Ok(c)
}

/// Noiseless forward model.
pub fn measure_exact(rho: &DensityMatrix, f_set: &OperatorSet) -> Result<Vec<f64>> {
    f_set.ops().iter().map(|f| expectation(rho, f)).collect()
}

/// Spectral square root with eigenvalues above `-tol` clamped to zero.
/// Eigenvalues below `SPECTRAL_CUT · d · λ_max` are roundoff from the
/// eigensolver and are treated as exact zeros before taking square roots,
/// where they would otherwise grow to `O(sqrt ε)`.
pub const SPECTRAL_CUT: f64 = 4.0 * f64::EPSILON;

fn psd_sqrt(m: &ComplexMatrix, tol: f64) -> Result<ComplexMatrix> {
    let es = herm_eig(&HermitianOperator::symmetrized(m.clone()))?;
    check_psd(es.values(), tol)?;
    let top = es.values().iter().cloned().fold(0.0, f64::max);
    let floor = SPECTRAL_CUT * es.dim() as f64 * top;
    Ok(es.map_spectrum(|x| if x > floor { x.sqrt() } else { 0.0 }))
}

fn check_psd(values: &[f64], tol: f64) -> Result<()> {
    let lo = values[0];
    if lo < -tol {
        return Err(Error::NumericalIntegrity(format!(
            "eigenvalue {lo:.3e} below -{tol:.1e} inside fidelity"
        )));
    }
    Ok(())
}

pub fn fidelity(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<f64> {
    fidelity_with(rho1, rho2, &Tolerances::default())
}

/// `tr sqrt(sqrt(ρ1) ρ2 sqrt(ρ1))`, evaluated as the sum of singular values
/// of `sqrt(ρ1) sqrt(ρ2)` and clamped to `[0, 1]`.
pub fn fidelity_with(rho1: &DensityMatrix, rho2: &DensityMatrix, tol: &Tolerances) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return Err(Error::contract(format!(
            "fidelity of states with dimensions {} and {}",
            rho1.dim(),
            rho2.dim()
        )));
    }
    let product = psd_sqrt(rho1.matrix(), tol.psd)?.matmul(&psd_sqrt(rho2.matrix(), tol.psd)?);
    let f: f64 = singular_values(&product)?.iter().sum();
    Ok(f.clamp(0.0, 1.0))
}

/// `1 - λ_max(ρ)`.
pub fn purity_gap(rho: &DensityMatrix) -> Result<f64> {
    let values = herm_eigvals(&rho.as_operator())?;
    Ok((1.0 - values[values.len() - 1]).clamp(0.0, 1.0))
}

pub fn ground_state(f_set: &OperatorSet, a: &[f64]) -> Result<DensityMatrix> {
    ground_state_with(f_set, a, &Tolerances::default())
}

/// Projector onto the top eigenvector of `Σ a_i F_i`, i.e. the ground state
/// of `-Σ a_i F_i`.
pub fn ground_state_with(f_set: &OperatorSet, a: &[f64], tol: &Tolerances) -> Result<DensityMatrix> {
    let h = f_set.combine(a)?;
    let es = herm_eig(&h)?;
    let n = es.dim();
    if n < 2 {
        return DensityMatrix::pure(&es.vector(0));
    }
    let v = es.values();
    let gap = v[n - 1] - v[n - 2];
    if gap <= tol.ground_gap {
        return Err(Error::NotUniqueGroundState {
            gap,
            tolerance: tol.ground_gap,
        });
    }
    DensityMatrix::pure(&es.vector(n - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opsets::{builtin_f1, pauli, random_hermitian_set};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sz_set() -> OperatorSet {
        OperatorSet::new(vec![pauli(3)], vec!["Z".into()]).unwrap()
    }

    fn xyz_set() -> OperatorSet {
        OperatorSet::new(vec![pauli(1), pauli(2), pauli(3)], vec!["X".into(), "Y".into(), "Z".into()]).unwrap()
    }

    fn basis(n: usize, k: usize) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        v[k] = Complex64::new(1.0, 0.0);
        v
    }

    #[test]
    fn zero_parameters_give_maximally_mixed() {
        let f = builtin_f1();
        let rho = thermal_state(&f, &[0.0, 0.0, 0.0]).unwrap();
        assert!(rho.matrix().max_abs_diff(DensityMatrix::maximally_mixed(3).matrix()) < 1e-15);
    }

    #[test]
    fn diagonal_thermal_closed_form() {
        let beta: f64 = 0.7;
        let rho = thermal_state(&sz_set(), &[beta]).unwrap();
        let z = beta.exp() + (-beta).exp();
        assert!((rho.matrix()[(0, 0)].re - beta.exp() / z).abs() < 1e-15);
        assert!((rho.matrix()[(1, 1)].re - (-beta).exp() / z).abs() < 1e-15);
        assert!(rho.matrix()[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn thermal_dimension_mismatch() {
        assert!(matches!(thermal_state(&builtin_f1(), &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn thermal_survives_large_beta() {
        let f = random_hermitian_set(8, 3, 3).unwrap();
        let theta = [100.0, -100.0, 100.0];
        let rho = thermal_state(&f, &theta).unwrap();
        assert!(rho.matrix().is_finite());
        DensityMatrix::new(rho.matrix().clone()).unwrap();
    }

    #[test]
    fn expectation_cases() {
        let f = builtin_f1();
        let mixed = DensityMatrix::maximally_mixed(3);
        for op in f.ops() {
            assert!((expectation(&mixed, op).unwrap() - op.trace() / 3.0).abs() < 1e-15);
        }
        let up = DensityMatrix::pure(&basis(2, 0)).unwrap();
        assert_eq!(expectation(&up, &pauli(3)).unwrap(), 1.0);
        assert!(expectation(&up, f.get(0)).is_err());
    }

    #[test]
    fn expectation_flags_large_imaginary_part() {
        // Feeding a non-Hermitian "state" via the trusted constructor.
        let mut m = ComplexMatrix::identity(2).scale(0.5);
        m[(0, 1)] = Complex64::new(0.0, 0.3);
        let rho = DensityMatrix::from_trusted(m);
        let err = expectation(&rho, &pauli(1)).unwrap_err();
        assert!(matches!(err, Error::NumericalIntegrity(_)));
    }

    #[test]
    fn measure_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = measure(&DensityMatrix::maximally_mixed(3), &builtin_f1(), None, &mut rng).unwrap();
        assert_eq!(c, vec![0.0, 0.0, 0.0]);
        // Ground state of sigma_z is |1>.
        let down = DensityMatrix::pure(&basis(2, 1)).unwrap();
        let c = measure(&down, &xyz_set(), None, &mut rng).unwrap();
        assert_eq!(c, vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn measure_noise_is_seeded() {
        let rho = thermal_state(&builtin_f1(), &[0.5, -0.3, 0.8]).unwrap();
        let noise = NoiseSpec::Additive { sigma: 0.01 };
        let exact = measure_exact(&rho, &builtin_f1()).unwrap();
        let a = measure(&rho, &builtin_f1(), Some(&noise), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = measure(&rho, &builtin_f1(), Some(&noise), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, exact);
        // Regenerate the perturbation directly from the same stream.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 0.01).unwrap();
        for (i, x) in exact.iter().enumerate() {
            assert_eq!(a[i], x + n.sample(&mut rng));
        }
    }

    #[test]
    fn multiplicative_noise_length_checked() {
        let rho = DensityMatrix::maximally_mixed(3);
        let noise = NoiseSpec::Multiplicative { rel_sigma: vec![0.01, 0.02] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(measure(&rho, &builtin_f1(), Some(&noise), &mut rng).is_err());
    }

    #[test]
    fn fidelity_cases() {
        let up = DensityMatrix::pure(&basis(2, 0)).unwrap();
        let down = DensityMatrix::pure(&basis(2, 1)).unwrap();
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!(fidelity(&up, &down).unwrap().abs() < 1e-12);
        assert!((fidelity(&mixed, &up).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((fidelity(&up, &mixed).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let rho = thermal_state(&builtin_f1(), &[0.5, -0.3, 0.8]).unwrap();
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-10);
        assert!(fidelity(&rho, &mixed).is_err());
    }

    #[test]
    fn purity_gap_cases() {
        let up = DensityMatrix::pure(&basis(2, 0)).unwrap();
        assert!(purity_gap(&up).unwrap() < 1e-15);
        assert!((purity_gap(&DensityMatrix::maximally_mixed(4)).unwrap() - 0.75).abs() < 1e-15);
        let rho = thermal_state(&sz_set(), &[2.0]).unwrap();
        let e2 = 2.0f64.exp();
        let expected = 1.0 - e2 / (e2 + 1.0 / e2);
        assert!((purity_gap(&rho).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.01799).abs() < 1e-5);
        assert!((thermal_purity_gap(&sz_set(), &[2.0]).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn ground_state_cases() {
        let g = ground_state(&sz_set(), &[1.0]).unwrap();
        let up = DensityMatrix::pure(&basis(2, 0)).unwrap();
        assert!(g.matrix().max_abs_diff(up.matrix()) < 1e-15);

        let id = OperatorSet::new(vec![HermitianOperator::identity(3)], vec!["I".into()]).unwrap();
        assert!(matches!(ground_state(&id, &[1.0]), Err(Error::NotUniqueGroundState { .. })));
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(ComplexMatrix::identity(2)).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::from_diagonal(&[1.5, -0.5])).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::from_diagonal(&[0.25, 0.75])).is_ok());
        assert!(DensityMatrix::pure(&[]).is_err());
    }
}
