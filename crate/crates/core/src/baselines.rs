//! Classical solvers for the same inverse problem: a coordinate-wise
//! information-geometric iteration, and a cross-entropy learner in the style
//! of a quantum Boltzmann machine.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{MeasurementVector, TrainingPair};
use crate::error::{Error, Result};
use crate::estimate::{quantile, FidelityReport, InverseMap, Reference};
use crate::opsets::OperatorSet;
use crate::qcore::{expectation, fidelity, gibbs_state, herm_eigvals, thermal_state, DensityMatrix, HermitianOperator};

/// Variances below this make a coordinate update undefined.
pub const VARIANCE_FLOOR: f64 = 1e-14;

/// Relative slack when counting non-increasing loss steps.
pub const ROUNDOFF_SLACK: f64 = 16.0 * f64::EPSILON;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterativeConfig {
    /// Stop once `Σ|c_i - tr F_i τ|` is at or below this.
    pub error_bound: f64,
    pub max_sweeps: usize,
    /// Multiplies every step.
    pub damping: f64,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        Self {
            error_bound: 1e-10,
            max_sweeps: 10_000,
            damping: 1.0,
        }
    }
}

impl IterativeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.error_bound > 0.0) || self.max_sweeps == 0 || !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(Error::contract("error bound and damping must be positive and the sweep cap at least 1"));
        }
        Ok(())
    }
}

/// A coordinate left unchanged because the observable has no spread under
/// the current state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedUpdate {
    pub sweep: usize,
    pub index: usize,
    pub variance: f64,
}

#[derive(Clone, Debug)]
pub struct IterativeOutcome {
    /// `I + Σ θ_i F_i`.
    pub hamiltonian: HermitianOperator,
    pub theta: Vec<f64>,
    pub tau: DensityMatrix,
    /// Residual before the first sweep, then after each sweep.
    pub residual_history: Vec<f64>,
    pub sweeps: usize,
    pub skipped: Vec<SkippedUpdate>,
}

impl IterativeOutcome {
    pub fn residual(&self) -> f64 {
        *self.residual_history.last().expect("history is never empty")
    }
}

fn check_lengths(f_set: &OperatorSet, c: &[f64]) -> Result<()> {
    if c.len() != f_set.len() {
        return Err(Error::contract(format!(
            "{} expectation values for {} observables",
            c.len(),
            f_set.len()
        )));
    }
    Ok(())
}

/// `Σ|c_i - tr F_i τ|`.
pub fn l1_residual(tau: &DensityMatrix, f_set: &OperatorSet, c: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (f, &ci) in f_set.ops().iter().zip(c) {
        total += (ci - expectation(tau, f)?).abs();
    }
    Ok(total)
}

/// Starting from `H = I`, sweeps `i = 1..m` in order applying
/// `H <- H + ε F_i` with `ε = (c_i - ⟨F_i⟩) / (⟨F_i²⟩ - ⟨F_i⟩²)` under the
/// current `τ = e^H / tr e^H`, until the residual drops to the bound.
///
/// An unrealizable `c` shows up only as [`Error::NonConvergence`].
pub fn iterative_mee(f_set: &OperatorSet, c: &MeasurementVector, cfg: &IterativeConfig) -> Result<IterativeOutcome> {
    cfg.validate()?;
    let c = c.values();
    check_lengths(f_set, c)?;
    let squares: Vec<HermitianOperator> = f_set.ops().iter().map(HermitianOperator::square).collect();

    let mut hamiltonian = HermitianOperator::identity(f_set.dim());
    let mut theta = vec![0.0; f_set.len()];
    let mut tau = gibbs_state(&hamiltonian)?;
    let mut residual = l1_residual(&tau, f_set, c)?;
    let mut history = vec![residual];
    let mut skipped = Vec::new();
    let mut sweeps = 0;

    while residual > cfg.error_bound {
        if sweeps == cfg.max_sweeps {
            return Err(Error::NonConvergence { sweeps, residual });
        }
        for (i, (f, f2)) in f_set.ops().iter().zip(&squares).enumerate() {
            let mean = expectation(&tau, f)?;
            let variance = expectation(&tau, f2)? - mean * mean;
            if variance.abs() < VARIANCE_FLOOR {
                log::warn!("sweep {sweep}: observable {i} is deterministic under the current state, skipped", sweep = sweeps);
                skipped.push(SkippedUpdate {
                    sweep: sweeps,
                    index: i,
                    variance,
                });
                continue;
            }
            let eps = cfg.damping * (c[i] - mean) / variance;
            hamiltonian.add_scaled(eps, f);
            theta[i] += eps;
            tau = gibbs_state(&hamiltonian)?;
        }
        sweeps += 1;
        let next = l1_residual(&tau, f_set, c)?;
        if next > residual {
            log::debug!("residual rose from {residual:e} to {next:e} at sweep {sweeps}");
        }
        residual = next;
        history.push(residual);
    }
    Ok(IterativeOutcome {
        hamiltonian,
        theta,
        tau,
        residual_history: history,
        sweeps,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QbmConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Central-difference step for the gradient.
    pub fd_step: f64,
}

impl Default for QbmConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            iterations: 500,
            fd_step: 1e-4,
        }
    }
}

impl QbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.iterations == 0 || !(self.fd_step > 0.0) {
            return Err(Error::contract("learning rate, iterations and step must be positive"));
        }
        Ok(())
    }
}

/// Cross-entropy objective `-Σ p_i log p'_i` over shifted observables.
///
/// Each `F_i` with a negative eigenvalue `f_min` is replaced by
/// `F_i + (⌊-f_min⌋ + 1) I`, which leaves thermal states unchanged and makes
/// the expectations positive. `p` normalizes the shifted targets and `p'` the
/// shifted expectations under `τ(a) = e^{Σ a_i F_i} / tr e^{Σ a_i F_i}`.
#[derive(Clone, Debug)]
pub struct QbmProblem {
    shifted: OperatorSet,
    shifts: Vec<f64>,
    target: Vec<f64>,
}

impl QbmProblem {
    pub fn new(f_set: &OperatorSet, c: &MeasurementVector) -> Result<Self> {
        let c = c.values();
        check_lengths(f_set, c)?;
        let identity = HermitianOperator::identity(f_set.dim());
        let mut ops = Vec::with_capacity(f_set.len());
        let mut shifts = Vec::with_capacity(f_set.len());
        for f in f_set.ops() {
            let f_min = herm_eigvals(f)?[0];
            let shift = if f_min < 0.0 { (-f_min).floor() + 1.0 } else { 0.0 };
            let mut g = f.clone();
            g.add_scaled(shift, &identity);
            ops.push(g);
            shifts.push(shift);
        }
        let shifted = OperatorSet::new(ops, f_set.labels().to_vec())?;
        let shifted_c: Vec<f64> = c.iter().zip(&shifts).map(|(ci, s)| ci + s).collect();
        if let Some(i) = shifted_c.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::contract(format!(
                "shifted expectation {i} is {} but must be positive",
                shifted_c[i]
            )));
        }
        let total: f64 = shifted_c.iter().sum();
        Ok(Self {
            shifted,
            shifts,
            target: shifted_c.iter().map(|x| x / total).collect(),
        })
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    /// The normalized target `p`.
    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn state(&self, a: &[f64]) -> Result<DensityMatrix> {
        thermal_state(&self.shifted, a)
    }

    pub fn model_distribution(&self, tau: &DensityMatrix) -> Result<Vec<f64>> {
        let q = self
            .shifted
            .ops()
            .iter()
            .map(|f| expectation(tau, f))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = q.iter().sum();
        Ok(q.iter().map(|x| x / total).collect())
    }

    pub fn loss(&self, a: &[f64]) -> Result<f64> {
        let p_model = self.model_distribution(&self.state(a)?)?;
        let value = -self.target.iter().zip(&p_model).map(|(p, q)| p * q.ln()).sum::<f64>();
        if !value.is_finite() {
            return Err(Error::NonFinite("cross-entropy loss".into()));
        }
        Ok(value)
    }

    /// `-Σ p_i log p_i`, the value at a perfect match.
    pub fn loss_floor(&self) -> f64 {
        -self.target.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// Central-difference gradient.
    pub fn gradient(&self, a: &[f64], step: f64) -> Result<Vec<f64>> {
        let mut probe = a.to_vec();
        (0..a.len())
            .map(|i| {
                probe[i] = a[i] + step;
                let up = self.loss(&probe)?;
                probe[i] = a[i] - step;
                let down = self.loss(&probe)?;
                probe[i] = a[i];
                Ok((up - down) / (2.0 * step))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct QbmOutcome {
    pub coefficients: Vec<f64>,
    pub tau: DensityMatrix,
    /// Loss at every iterate, the start and the end included.
    pub loss_history: Vec<f64>,
    pub shifts: Vec<f64>,
    /// Fraction of steps that did not increase the loss.
    pub monotone_fraction: f64,
}

/// Plain gradient descent on the cross-entropy from `a = 0`.
pub fn qbm_mee(f_set: &OperatorSet, c: &MeasurementVector, cfg: &QbmConfig) -> Result<QbmOutcome> {
    cfg.validate()?;
    let problem = QbmProblem::new(f_set, c)?;
    let mut a = vec![0.0; f_set.len()];
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    history.push(problem.loss(&a)?);
    for _ in 0..cfg.iterations {
        let g = problem.gradient(&a, cfg.fd_step)?;
        for (ai, gi) in a.iter_mut().zip(&g) {
            *ai -= cfg.learning_rate * gi;
        }
        history.push(problem.loss(&a)?);
    }
    let steps = history.len() - 1;
    // Rises within a few ulps are roundoff once the loss has settled.
    let non_increasing = history
        .windows(2)
        .filter(|w| w[1] <= w[0] + ROUNDOFF_SLACK * w[0].abs())
        .count();
    let monotone_fraction = non_increasing as f64 / steps as f64;
    if monotone_fraction < 0.9 {
        log::warn!("cross-entropy loss decreased on only {:.0}% of steps", 100.0 * monotone_fraction);
    }
    Ok(QbmOutcome {
        tau: problem.state(&a)?,
        coefficients: a,
        loss_history: history,
        shifts: problem.shifts.clone(),
        monotone_fraction,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl ResidualStats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: quantile(&sorted, 0.5),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// One solver's results over the shared inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverBlock {
    pub name: String,
    pub points: usize,
    /// Points where the solver returned an error; excluded from the stats.
    pub failures: usize,
    /// Against the maximum-entropy state of each input.
    pub fidelity: Option<FidelityReport>,
    /// `Σ|c_i - tr F_i τ|` of each solution.
    pub residual: Option<ResidualStats>,
    /// For the network, batch inference only; for the others, whole solves.
    pub wall_clock_seconds: f64,
    pub seconds_per_point: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub points: usize,
    pub solvers: Vec<SolverBlock>,
}

impl ComparisonReport {
    pub fn solver(&self, name: &str) -> Option<&SolverBlock> {
        self.solvers.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// The report with timing fields zeroed.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.solvers {
            s.wall_clock_seconds = 0.0;
            s.seconds_per_point = 0.0;
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub iterative: Option<IterativeConfig>,
    pub qbm: Option<QbmConfig>,
}

fn block(
    name: &str,
    results: Vec<Result<DensityMatrix>>,
    f_set: &OperatorSet,
    pairs: &[TrainingPair],
    seconds: f64,
) -> Result<SolverBlock> {
    let mut fids = Vec::new();
    let mut residuals = Vec::new();
    let mut failures = 0;
    for (res, pair) in results.into_iter().zip(pairs) {
        match res {
            Ok(tau) => {
                let truth = thermal_state(f_set, pair.theta.theta())?;
                fids.push(fidelity(&tau, &truth)?);
                residuals.push(l1_residual(&tau, f_set, pair.c.values())?);
            }
            Err(e) if e.is_numerical() => {
                log::warn!("{name}: {e}");
                failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SolverBlock {
        name: name.to_string(),
        points: pairs.len(),
        failures,
        fidelity: if fids.is_empty() {
            None
        } else {
            Some(FidelityReport::from_fidelities(fids, Reference::Mee)?)
        },
        residual: ResidualStats::of(&residuals),
        wall_clock_seconds: seconds,
        seconds_per_point: seconds / pairs.len() as f64,
    })
}

/// Runs the network (if any) and the configured solvers on the same inputs.
pub fn compare_solvers<M: InverseMap + ?Sized>(
    f_set: &OperatorSet,
    test_pairs: &[TrainingPair],
    net: Option<&M>,
    cfg: &CompareConfig,
) -> Result<ComparisonReport> {
    if test_pairs.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let mut solvers = Vec::new();

    if let Some(net) = net {
        let inputs: Vec<&[f64]> = test_pairs.iter().map(|p| p.c.values()).collect();
        let start = Instant::now();
        let thetas = net.infer_batch(&inputs)?;
        let seconds = start.elapsed().as_secs_f64();
        let states = thetas
            .par_iter()
            .map(|t| {
                check_lengths(f_set, t)?;
                thermal_state(f_set, t)
            })
            .collect();
        solvers.push(block("network", states, f_set, test_pairs, seconds)?);
    }
    if let Some(icfg) = &cfg.iterative {
        let start = Instant::now();
        let states = test_pairs
            .par_iter()
            .map(|p| iterative_mee(f_set, &p.c, icfg).map(|o| o.tau))
            .collect();
        let seconds = start.elapsed().as_secs_f64();
        solvers.push(block("iterative", states, f_set, test_pairs, seconds)?);
    }
    if let Some(qcfg) = &cfg.qbm {
        let start = Instant::now();
        let states = test_pairs
            .par_iter()
            .map(|p| qbm_mee(f_set, &p.c, qcfg).map(|o| o.tau))
            .collect();
        let seconds = start.elapsed().as_secs_f64();
        solvers.push(block("qbm", states, f_set, test_pairs, seconds)?);
    }
    Ok(ComparisonReport {
        points: test_pairs.len(),
        solvers,
    })
}
