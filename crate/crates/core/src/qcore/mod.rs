//! Complex linear algebra and quantum-state primitives.

mod eigen;
mod matrix;
mod state;
mod svd;

pub use eigen::{herm_eig, herm_eigvals, EigenSystem, MAX_QL_ITERATIONS};
pub use matrix::{ComplexMatrix, HermitianOperator, HERMITIAN_TOL};
pub use state::{
    expectation, expectation_with, fidelity, fidelity_with, gibbs_state, ground_state, ground_state_with,
    measure, measure_exact, purity_gap, thermal_purity_gap, thermal_state, DensityMatrix, NoiseSpec,
    ThermalSpectrum, Tolerances,
};
pub use svd::{singular_values, MAX_JACOBI_SWEEPS};
