//! Estimation pipeline `c -> θ' -> ρ_est`, consistency residuals and
//! fidelity statistics.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{random_direction, stream, MeasurementVector, ThermalParams, TrainingPair};
use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::opsets::OperatorSet;
use crate::qcore::{expectation, fidelity, ground_state, measure, measure_exact, thermal_state, DensityMatrix, NoiseSpec};

/// Denominators at or below this magnitude make a relative error undefined.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-12;

/// Anything that turns a measurement vector into thermal parameters.
pub trait InverseMap: Sync {
    fn infer(&self, c: &[f64]) -> Result<Vec<f64>>;

    fn infer_batch(&self, cs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        cs.iter().map(|c| self.infer(c)).collect()
    }
}

impl InverseMap for Mlp {
    fn infer(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.forward(c)
    }

    fn infer_batch(&self, cs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if cs.is_empty() {
            return Ok(Vec::new());
        }
        let width = self.input_size();
        let mut flat = Vec::with_capacity(cs.len() * width);
        for c in cs {
            if c.len() != width {
                return Err(Error::contract(format!(
                    "network input has length {} but the network expects {width}",
                    c.len()
                )));
            }
            flat.extend_from_slice(c);
        }
        let x = ndarray::Array2::from_shape_vec((cs.len(), width), flat).expect("shape checked");
        let out = self.forward_batch(x.view())?;
        Ok(out.rows().into_iter().map(|r| r.to_vec()).collect())
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

/// `θ' = Φ(c)` and `ρ_est = exp(Σθ'_i F_i) / tr exp(Σθ'_i F_i)`.
pub fn estimate_state<M: InverseMap + ?Sized>(
    map: &M,
    f_set: &OperatorSet,
    c: &MeasurementVector,
) -> Result<(ThermalParams, DensityMatrix)> {
    check_lengths(f_set, c.values())?;
    let theta = map.infer(c.values())?;
    check_lengths(f_set, &theta)?;
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("estimated parameters".into()));
    }
    let rho = thermal_state(f_set, &theta)?;
    Ok((ThermalParams(theta), rho))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    L2,
    Linf,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Metric::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Linf => diffs.fold(0.0, f64::max),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "linf" => Ok(Metric::Linf),
            other => Err(Error::contract(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRecord {
    pub c: Vec<f64>,
    /// Expectations of the estimated state.
    pub reconstructed: Vec<f64>,
    pub metric: Metric,
    pub residual: f64,
}

/// Distance between `c` and the expectations of the state estimated from it.
/// Reported only; nothing is rejected on its value.
pub fn consistency_check<M: InverseMap + ?Sized>(
    map: &M,
    f_set: &OperatorSet,
    c: &MeasurementVector,
    metric: Metric,
) -> Result<ConsistencyRecord> {
    let (_, rho) = estimate_state(map, f_set, c)?;
    let reconstructed = measure_exact(&rho, f_set)?;
    let residual = metric.distance(c.values(), &reconstructed);
    Ok(ConsistencyRecord {
        c: c.values().to_vec(),
        reconstructed,
        metric,
        residual,
    })
}

/// What the estimates were compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// The exact maximum-entropy state of the input.
    #[default]
    Mee,
    /// A prepared pure ground state.
    GroundState,
    /// A user-supplied density matrix.
    Explicit,
}

/// Boxplot statistics of a set of values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub reference: Reference,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (n - 1); 0 for a single point.
    pub std: f64,
    pub q1: f64,
    pub q3: f64,
    /// Indices of points outside `[q1 - 1.5 IQR, q3 + 1.5 IQR]`.
    pub outliers: Vec<usize>,
    pub fidelities: Vec<f64>,
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl FidelityReport {
    pub fn from_fidelities(fidelities: Vec<f64>, reference: Reference) -> Result<Self> {
        if fidelities.is_empty() {
            return Err(Error::contract("cannot summarize an empty fidelity set"));
        }
        if fidelities.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFinite("fidelity".into()));
        }
        let mut sorted = fidelities.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let std = if sorted.len() > 1 {
            (sorted.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let q1 = quantile(&sorted, 0.25);
        let q3 = quantile(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let outliers = fidelities
            .iter()
            .enumerate()
            .filter(|(_, &f)| f < lo || f > hi)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            reference,
            mean,
            median: quantile(&sorted, 0.5),
            std,
            q1,
            q3,
            outliers,
            fidelities,
        })
    }

    pub fn len(&self) -> usize {
        self.fidelities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fidelities.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// One fidelity per row under a `fidelity` header.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "fidelity")?;
        for f in &self.fidelities {
            writeln!(w, "{f}")?;
        }
        Ok(())
    }
}

/// Fidelity of each estimate against the maximum-entropy state of its pair.
pub fn evaluate<M: InverseMap + ?Sized>(map: &M, f_set: &OperatorSet, test_pairs: &[TrainingPair]) -> Result<FidelityReport> {
    if test_pairs.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let fids = test_pairs
        .par_iter()
        .map(|p| {
            let (_, est) = estimate_state(map, f_set, &p.c)?;
            let truth = thermal_state(f_set, p.theta.theta())?;
            fidelity(&est, &truth)
        })
        .collect::<Result<Vec<_>>>()?;
    FidelityReport::from_fidelities(fids, Reference::Mee)
}

/// Fidelity of each estimate against an explicit reference state.
pub fn evaluate_against<M: InverseMap + ?Sized>(
    map: &M,
    f_set: &OperatorSet,
    inputs: &[MeasurementVector],
    references: &[DensityMatrix],
    reference: Reference,
) -> Result<FidelityReport> {
    if inputs.is_empty() || inputs.len() != references.len() {
        return Err(Error::contract("inputs and references must be non-empty and equally long"));
    }
    let fids = inputs
        .par_iter()
        .zip(references)
        .map(|(c, truth)| {
            let (_, est) = estimate_state(map, f_set, c)?;
            fidelity(&est, truth)
        })
        .collect::<Result<Vec<_>>>()?;
    FidelityReport::from_fidelities(fids, reference)
}

/// Report over a contiguous group of β intervals `(lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub beta_lo: usize,
    pub beta_hi: usize,
    pub report: FidelityReport,
}

/// Fresh test points, `per_interval_count` with β uniform in each `(i, i+1]`
/// for `i < n_intervals`, summarized per group of `group_size` intervals.
pub fn interval_boxplots<M: InverseMap + ?Sized>(
    map: &M,
    f_set: &OperatorSet,
    n_intervals: usize,
    per_interval_count: usize,
    group_size: usize,
    seed: u64,
) -> Result<Vec<IntervalReport>> {
    if n_intervals == 0 || per_interval_count == 0 || group_size == 0 {
        return Err(Error::contract("interval count, points per interval and group size must be positive"));
    }
    let m = f_set.len();
    let fids: Vec<f64> = (0..n_intervals * per_interval_count)
        .into_par_iter()
        .map(|k| {
            let i = k / per_interval_count;
            let mut rng = stream(seed, k as u64);
            let beta = i as f64 + (1.0 - rng.random::<f64>());
            let a = random_direction(m, &mut rng);
            let theta = ThermalParams::from_beta_direction(beta, &a);
            let truth = thermal_state(f_set, theta.theta())?;
            let c = MeasurementVector::new(measure_exact(&truth, f_set)?)?;
            let (_, est) = estimate_state(map, f_set, &c)?;
            fidelity(&est, &truth)
        })
        .collect::<Result<_>>()?;
    let per_group = group_size * per_interval_count;
    fids.chunks(per_group)
        .enumerate()
        .map(|(g, chunk)| {
            Ok(IntervalReport {
                beta_lo: g * group_size,
                beta_hi: ((g + 1) * group_size).min(n_intervals),
                report: FidelityReport::from_fidelities(chunk.to_vec(), Reference::Mee)?,
            })
        })
        .collect()
}

/// `(c_i - tr ρF_i) / tr ρF_i`; `None` where the denominator vanishes.
pub fn relative_errors(rho: &DensityMatrix, f_set: &OperatorSet, c_measured: &[f64]) -> Result<Vec<Option<f64>>> {
    check_lengths(f_set, c_measured)?;
    f_set
        .ops()
        .iter()
        .zip(c_measured)
        .map(|(f, &c)| {
            let expected = expectation(rho, f)?;
            Ok((expected.abs() > RELATIVE_ERROR_FLOOR).then(|| (c - expected) / expected))
        })
        .collect()
}

/// Multiplicative noise whose mean absolute relative error is `mean_abs[i]`
/// for observable `i`: for Gaussian factors `E|δ| = σ sqrt(2/π)`.
pub fn noise_matching_mean_abs(mean_abs: &[f64]) -> NoiseSpec {
    let scale = (std::f64::consts::PI / 2.0).sqrt();
    NoiseSpec::Multiplicative {
        rel_sigma: mean_abs.iter().map(|r| r * scale).collect(),
    }
}

/// A prepared pure state and its (noisy) measured expectations.
#[derive(Clone, Debug)]
pub struct GroundStateSample {
    pub direction: Vec<f64>,
    pub state: DensityMatrix,
    pub measured: MeasurementVector,
}

/// `count` unique ground states of `-Σ a_i F_i` for random unit `a`, measured
/// with `noise`. Directions with a degenerate top level are redrawn.
pub fn ground_state_samples(
    f_set: &OperatorSet,
    count: usize,
    noise: Option<&NoiseSpec>,
    seed: u64,
) -> Result<Vec<GroundStateSample>> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            for _ in 0..100 {
                let a = random_direction(f_set.len(), &mut rng);
                let state = match ground_state(f_set, &a) {
                    Ok(s) => s,
                    Err(Error::NotUniqueGroundState { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let measured = MeasurementVector::new(measure(&state, f_set, noise, &mut rng)?)?;
                return Ok(GroundStateSample {
                    direction: a,
                    state,
                    measured,
                });
            }
            Err(Error::contract("no direction with a unique ground state found in 100 draws"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{distribution_even, generate_dataset};
    use crate::mlp::{Activation, Params};
    use crate::opsets::{builtin_f1, pauli_lattice};
    use std::collections::HashMap;

    /// Returns the generating parameters of known inputs.
    struct Lookup(HashMap<Vec<u64>, Vec<f64>>);

    impl Lookup {
        fn new(pairs: &[TrainingPair]) -> Self {
            Self(
                pairs
                    .iter()
                    .map(|p| (p.c.values().iter().map(|x| x.to_bits()).collect(), p.theta.theta().to_vec()))
                    .collect(),
            )
        }
    }

    impl InverseMap for Lookup {
        fn infer(&self, c: &[f64]) -> Result<Vec<f64>> {
            let key: Vec<u64> = c.iter().map(|x| x.to_bits()).collect();
            self.0.get(&key).cloned().ok_or_else(|| Error::contract("unknown input"))
        }
    }

    struct Constant(Vec<f64>);

    impl InverseMap for Constant {
        fn infer(&self, _: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn zero_net(m: usize) -> Mlp {
        let mut net = Mlp::new(&[m, 6, m], Activation::Relu, 0).unwrap();
        let p = net.params().clone();
        *net.params_mut() = Params {
            weights: p.weights.iter().map(|w| w * 0.0).collect(),
            biases: p.biases.iter().map(|b| b * 0.0).collect(),
        };
        net
    }

    fn pairs(n: usize) -> Vec<TrainingPair> {
        generate_dataset(&builtin_f1(), &distribution_even(10).unwrap(), n, None, 1).unwrap()
    }

    #[test]
    fn oracle_inverse_is_exact() {
        let f = builtin_f1();
        let ps = pairs(30);
        let oracle = Lookup::new(&ps);
        let report = evaluate(&oracle, &f, &ps).unwrap();
        assert!((report.mean - 1.0).abs() < 1e-9);
        assert!((report.median - 1.0).abs() < 1e-9);
        assert_eq!(report.reference, Reference::Mee);
        for p in &ps {
            let rec = consistency_check(&oracle, &f, &p.c, Metric::L2).unwrap();
            assert!(rec.residual <= 1e-10, "{}", rec.residual);
        }
    }

    #[test]
    fn zero_network_gives_maximally_mixed() {
        let f = builtin_f1();
        let net = zero_net(3);
        let c = MeasurementVector::new(vec![0.4, -0.2, 0.9]).unwrap();
        let (theta, rho) = estimate_state(&net, &f, &c).unwrap();
        assert_eq!(theta.theta(), &[0.0; 3]);
        assert!(rho.matrix().max_abs_diff(DensityMatrix::maximally_mixed(3).matrix()) < 1e-15);

        let fixed = MeasurementVector::new(measure_exact(&DensityMatrix::maximally_mixed(3), &f).unwrap()).unwrap();
        let rec = consistency_check(&net, &f, &fixed, Metric::Linf).unwrap();
        assert!(rec.residual < 1e-15);
    }

    #[test]
    fn garbage_networks_still_give_states() {
        let f = builtin_f1();
        let c = MeasurementVector::new(vec![1e3, -1e3, 7.0]).unwrap();
        for theta in [vec![800.0, -950.0, 1e4], vec![-1e-300, 0.0, 1e-300]] {
            let (_, rho) = estimate_state(&Constant(theta), &f, &c).unwrap();
            DensityMatrix::new(rho.matrix().clone()).unwrap();
        }
        assert!(estimate_state(&Constant(vec![f64::NAN, 0.0, 0.0]), &f, &c).is_err());
        assert!(estimate_state(&Constant(vec![0.0; 2]), &f, &c).is_err());
    }

    #[test]
    fn batch_inference_matches_single() {
        let net = Mlp::new(&[3, 10, 3], Activation::Tanh, 2).unwrap();
        let inputs: Vec<Vec<f64>> = (0..7).map(|k| vec![k as f64 * 0.1, -0.3, 0.5]).collect();
        let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let batch = net.infer_batch(&refs).unwrap();
        for (x, y) in inputs.iter().zip(&batch) {
            let single = net.infer(x).unwrap();
            for (a, b) in single.iter().zip(y) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn metrics() {
        assert_eq!(Metric::L2.distance(&[0.0, 3.0], &[4.0, 0.0]), 5.0);
        assert_eq!(Metric::Linf.distance(&[0.0, 3.0], &[4.0, 0.0]), 4.0);
        assert_eq!(Metric::L2.distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn report_statistics() {
        // Sorted: 0.5, 0.9, 0.92, 0.94, 0.96. Type 7: q1 = 0.9, median 0.92, q3 = 0.94.
        let fids = vec![0.94, 0.5, 0.92, 0.96, 0.9];
        let r = FidelityReport::from_fidelities(fids, Reference::Mee).unwrap();
        assert!((r.mean - 0.844).abs() < 1e-12);
        assert!((r.median - 0.92).abs() < 1e-12);
        assert!((r.q1 - 0.9).abs() < 1e-12);
        assert!((r.q3 - 0.94).abs() < 1e-12);
        // Fences 0.84 and 1.0.
        assert_eq!(r.outliers, vec![1]);
        let var: f64 = [0.94f64, 0.5, 0.92, 0.96, 0.9].iter().map(|f| (f - 0.844).powi(2)).sum::<f64>() / 4.0;
        assert!((r.std - var.sqrt()).abs() < 1e-12);

        let even = FidelityReport::from_fidelities(vec![0.1, 0.2, 0.3, 0.4], Reference::Mee).unwrap();
        assert!((even.median - 0.25).abs() < 1e-15);
        assert!((even.q1 - 0.175).abs() < 1e-15);
        assert!((even.q3 - 0.325).abs() < 1e-15);

        let single = FidelityReport::from_fidelities(vec![0.7], Reference::GroundState).unwrap();
        assert_eq!((single.median, single.std, single.q1), (0.7, 0.0, 0.7));
        assert!(FidelityReport::from_fidelities(vec![], Reference::Mee).is_err());
    }

    #[test]
    fn report_json_fields() {
        let r = FidelityReport::from_fidelities(vec![0.9, 1.0], Reference::GroundState).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["mean", "median", "std", "q1", "q3", "outliers", "fidelities", "reference"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["reference"], "ground_state");
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "fidelity\n0.9\n1\n");
    }

    #[test]
    fn interval_boxplots_with_constant_map() {
        let f = builtin_f1();
        let groups = interval_boxplots(&Constant(vec![0.0; 3]), &f, 7, 4, 5, 3).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!((groups[0].beta_lo, groups[0].beta_hi), (0, 5));
        assert_eq!((groups[1].beta_lo, groups[1].beta_hi), (5, 7));
        assert_eq!(groups[0].report.len(), 20);
        assert_eq!(groups[1].report.len(), 8);
        // The maximally mixed estimate gets worse as the states sharpen.
        assert!(groups[0].report.mean > groups[1].report.mean);
    }

    #[test]
    fn relative_error_cases() {
        let f = builtin_f1();
        let ps = pairs(1);
        let rho = thermal_state(&f, ps[0].theta.theta()).unwrap();
        let exact = measure_exact(&rho, &f).unwrap();
        for e in relative_errors(&rho, &f, &exact).unwrap() {
            assert_eq!(e, Some(0.0));
        }
        let mut scaled = exact.clone();
        scaled[0] *= 1.0243;
        let errs = relative_errors(&rho, &f, &scaled).unwrap();
        assert!((errs[0].unwrap() - 0.0243).abs() < 1e-12);

        let mixed = DensityMatrix::maximally_mixed(8);
        let lattice = pauli_lattice(3).unwrap();
        let errs = relative_errors(&mixed, &lattice, &vec![0.01; lattice.len()]).unwrap();
        assert!(errs.iter().all(Option::is_none));
    }

    #[test]
    fn ground_state_samples_are_pure_and_noisy() {
        let f = builtin_f1();
        let noise = noise_matching_mean_abs(&[0.0243, 0.0191, 0.0173]);
        let clean = ground_state_samples(&f, 20, None, 4).unwrap();
        let noisy = ground_state_samples(&f, 20, Some(&noise), 4).unwrap();
        for (a, b) in clean.iter().zip(&noisy) {
            assert_eq!(a.direction, b.direction);
            let purity_gap = crate::qcore::purity_gap(&a.state).unwrap();
            assert!(purity_gap < 1e-12);
            assert_eq!(a.measured.values(), measure_exact(&a.state, &f).unwrap().as_slice());
            assert_ne!(a.measured, b.measured);
        }
    }

    #[test]
    fn noise_scale_matches_mean_abs() {
        let NoiseSpec::Multiplicative { rel_sigma } = noise_matching_mean_abs(&[0.02]) else {
            panic!("wrong noise kind");
        };
        let mut rng = stream(1, 0);
        let normal = rand_distr::Normal::new(0.0, rel_sigma[0]).unwrap();
        let n = 200_000;
        let mean_abs: f64 = (0..n).map(|_| rand_distr::Distribution::sample(&normal, &mut rng).abs()).sum::<f64>() / n as f64;
        assert!((mean_abs - 0.02).abs() < 2e-4, "{mean_abs}");
    }
}
