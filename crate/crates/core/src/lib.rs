//! Maximum-entropy estimation of quantum states from partial expectation
//! values.
//!
//! Given the expectation values `c_i = tr(ρ F_i)` of a fixed observable set,
//! the maximum-entropy state is the thermal state
//! `exp(Σ θ_i F_i) / tr exp(Σ θ_i F_i)`. This crate learns the inverse map
//! `c -> θ` with a feed-forward network trained on synthetic pairs, and ships
//! two classical solvers of the same problem for comparison.

pub mod baselines;
pub mod datagen;
pub mod error;
pub mod estimate;
pub mod mlp;
pub mod opsets;
pub mod qcore;

pub use error::{Error, Result};
