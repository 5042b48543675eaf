//! Synthetic training data: β-roughness profiling, the three candidate β
//! distributions, parameter sampling and dataset files.
//!
//! The coldness axis `(0, N]` is cut into unit intervals `I_i = (i, i+1]`.
//! A [`BetaDistribution`] assigns a weight to each interval; parameters are
//! drawn by picking an interval, drawing β uniformly inside it, and pairing it
//! with a uniformly random unit direction `a`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opsets::OperatorSet;
use crate::qcore::{measure, thermal_purity_gap, thermal_state, NoiseSpec};

pub const DATASET_FORMAT: &str = "qipdata-v1";

/// Number of unit β intervals covering `(0, 100]`.
pub const DEFAULT_INTERVALS: usize = 100;
/// Thermal states drawn per interval when profiling roughness.
pub const DEFAULT_PROFILE_SAMPLES: usize = 1000;
/// Leading intervals averaged by the first flattening step.
pub const FLATTEN_HEAD: usize = 10;

/// Parameters `θ = β a` of a thermal state with `β = |θ|` and unit `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThermalParams(pub Vec<f64>);

impl ThermalParams {
    pub fn from_beta_direction(beta: f64, direction: &[f64]) -> Self {
        Self(direction.iter().map(|a| beta * a).collect())
    }

    pub fn theta(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Coldness `β = |θ|₂`.
    pub fn beta(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Unit direction `θ/|θ|`, undefined at `θ = 0`.
    pub fn direction(&self) -> Option<Vec<f64>> {
        let b = self.beta();
        (b > 0.0).then(|| self.0.iter().map(|x| x / b).collect())
    }
}

/// Expectation values `c`, positional with respect to an [`OperatorSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementVector(pub Vec<f64>);

impl MeasurementVector {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if let Some(i) = c.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("measurement entry {i} is {}", c[i])));
        }
        Ok(Self(c))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One supervised example `(c, θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub c: MeasurementVector,
    pub theta: ThermalParams,
}

/// Weights over the unit β intervals `(i, i+1]`, `i = 0..N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaDistribution {
    weights: Vec<f64>,
}

impl BetaDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::contract("β distribution needs at least one interval"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::contract("β distribution weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!("β distribution weights sum to {total}, expected 1")));
        }
        Ok(Self { weights })
    }

    /// All mass on interval `(i, i+1]` of `n`.
    pub fn point_mass(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::contract(format!("interval {i} out of range for {n} intervals")));
        }
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self::new(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_intervals(&self) -> usize {
        self.weights.len()
    }

    /// Per-interval counts summing to `total`: `round(p_i · total)` repaired by
    /// largest remainders so the sum is exact.
    pub fn allocate(&self, total: usize) -> Vec<usize> {
        let exact: Vec<f64> = self.weights.iter().map(|p| p * total as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        // Largest fractional part first; ties go to the lower interval.
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().take(total.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

fn normalize(v: &[f64]) -> Result<BetaDistribution> {
    if v.is_empty() {
        return Err(Error::contract("empty roughness profile"));
    }
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::contract("roughness profile entries must be finite and non-negative"));
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::contract("roughness profile is identically zero"));
    }
    let mut w: Vec<f64> = v.iter().map(|x| x / total).collect();
    // Push the rounding residue onto the largest weight so the sum is 1 to
    // within an ulp or two.
    let resid = 1.0 - w.iter().sum::<f64>();
    let top = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    w[top] += resid;
    BetaDistribution::new(w)
}

/// Uniform weights `1/N`.
pub fn distribution_even(n: usize) -> Result<BetaDistribution> {
    if n == 0 {
        return Err(Error::contract("β distribution needs at least one interval"));
    }
    normalize(&vec![1.0; n])
}

/// Weights proportional to the roughness profile.
pub fn distribution_beta(lambda_bar: &[f64]) -> Result<BetaDistribution> {
    normalize(lambda_bar)
}

/// Roughness-proportional weights after two flattening passes: the leading
/// entries below their own mean are raised to it, then every entry below the
/// global mean of the result is raised to that mean.
pub fn distribution_flat(lambda_bar: &[f64]) -> Result<BetaDistribution> {
    normalize(&flatten(lambda_bar))
}

/// The two flattening passes without the final normalization.
pub fn flatten(lambda_bar: &[f64]) -> Vec<f64> {
    let mut v = lambda_bar.to_vec();
    if v.is_empty() {
        return v;
    }
    let head = FLATTEN_HEAD.min(v.len());
    let head_mean = v[..head].iter().sum::<f64>() / head as f64;
    for x in &mut v[..head] {
        if *x < head_mean {
            *x = head_mean;
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in &mut v {
        if *x < mean {
            *x = mean;
        }
    }
    v
}

/// Uniformly random unit vector: normalized standard normal draws.
pub fn random_direction<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// β uniform on `(i, i+1]`.
pub fn beta_in_interval<R: Rng + ?Sized>(i: usize, rng: &mut R) -> f64 {
    // random::<f64>() is in [0, 1), so 1 - u is in (0, 1].
    i as f64 + (1.0 - rng.random::<f64>())
}

/// `θ = β a` with β uniform on `(i, i+1]` and `a` a random unit vector.
pub fn sample_in_interval<R: Rng + ?Sized>(i: usize, m: usize, rng: &mut R) -> ThermalParams {
    let beta = beta_in_interval(i, rng);
    let a = random_direction(m, rng);
    ThermalParams::from_beta_direction(beta, &a)
}

/// Draws an interval proportionally to the weights, then calls
/// [`sample_in_interval`].
pub fn sample_params<R: Rng + ?Sized>(dist: &BetaDistribution, m: usize, rng: &mut R) -> ThermalParams {
    let idx = WeightedIndex::new(dist.weights()).expect("validated weights");
    let i = idx.sample(rng);
    sample_in_interval(i, m, rng)
}

/// Independent generator for item `index` of a seeded computation.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mean purity gap of thermal states per β interval.
///
/// For each interval `(i, i+1]`, `samples_per_interval` states are drawn with
/// β uniform in the interval and a random unit direction.
pub fn roughness_profile(
    f_set: &OperatorSet,
    n_intervals: usize,
    samples_per_interval: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_intervals == 0 || samples_per_interval == 0 {
        return Err(Error::contract("roughness profile needs at least one interval and one sample"));
    }
    (0..n_intervals)
        .into_par_iter()
        .map(|i| {
            let mut total = 0.0;
            for j in 0..samples_per_interval {
                let mut rng = stream(seed, (i * samples_per_interval + j) as u64);
                let theta = sample_in_interval(i, f_set.len(), &mut rng);
                total += thermal_purity_gap(f_set, theta.theta())?;
            }
            Ok(total / samples_per_interval as f64)
        })
        .collect()
}

/// One training pair from an explicit parameter vector.
pub fn make_pair<R: Rng + ?Sized>(
    f_set: &OperatorSet,
    theta: ThermalParams,
    noise: Option<&NoiseSpec>,
    rng: &mut R,
) -> Result<TrainingPair> {
    let rho = thermal_state(f_set, theta.theta())?;
    let c = measure(&rho, f_set, noise, rng)?;
    Ok(TrainingPair {
        c: MeasurementVector::new(c)?,
        theta,
    })
}

/// `count` pairs `(c, θ)` with `c = tr(ρ(θ) F) (+ noise)`.
///
/// Intervals are allocated deterministically from the weights (see
/// [`BetaDistribution::allocate`]), so the dataset follows the distribution
/// exactly up to rounding. Pair `k` draws from its own stream `(seed, k)`, so
/// the output does not depend on the rayon thread count.
pub fn generate_dataset(
    f_set: &OperatorSet,
    dist: &BetaDistribution,
    count: usize,
    noise: Option<&NoiseSpec>,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    if count == 0 {
        return Err(Error::contract("dataset size must be at least 1"));
    }
    let intervals: Vec<usize> = dist
        .allocate(count)
        .into_iter()
        .enumerate()
        .flat_map(|(i, n)| std::iter::repeat_n(i, n))
        .collect();
    intervals
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut rng = stream(seed, k as u64);
            let theta = sample_in_interval(i, f_set.len(), &mut rng);
            make_pair(f_set, theta, noise, &mut rng)
        })
        .collect()
}

/// Test pairs with β uniform on `(0, beta_max]`.
pub fn generate_uniform_test_set(f_set: &OperatorSet, count: usize, beta_max: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            let beta = beta_max as f64 * (1.0 - rng.random::<f64>());
            let a = random_direction(f_set.len(), &mut rng);
            make_pair(f_set, ThermalParams::from_beta_direction(beta, &a), None, &mut rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub m: usize,
    pub dim: usize,
    pub opset_label: String,
}

impl DatasetHeader {
    pub fn new(m: usize, dim: usize, opset_label: impl Into<String>) -> Self {
        Self {
            format: DATASET_FORMAT.to_string(),
            m,
            dim,
            opset_label: opset_label.into(),
        }
    }
}

/// Writes a JSON Lines dataset: header line, then one `{"c":..,"theta":..}`
/// object per pair.
pub fn save_dataset(path: &Path, header: &DatasetHeader, pairs: &[TrainingPair]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, header, pairs).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset<W: Write>(w: &mut W, header: &DatasetHeader, pairs: &[TrainingPair]) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")?;
    for p in pairs {
        serde_json::to_writer(&mut *w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<TrainingPair>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<(DatasetHeader, Vec<TrainingPair>)> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing dataset header"))?
        .map_err(|e| Error::io("<dataset>", e))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| Error::parse(1, e.to_string()))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::parse(1, format!("unsupported dataset format {:?}", header.format)));
    }
    let mut pairs = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: TrainingPair = serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        if pair.c.len() != header.m || pair.theta.len() != header.m {
            return Err(Error::parse(
                lineno,
                format!("expected vectors of length {}, got c={} theta={}", header.m, pair.c.len(), pair.theta.len()),
            ));
        }
        if pair.c.values().iter().chain(pair.theta.theta()).any(|x| !x.is_finite()) {
            return Err(Error::parse(lineno, "non-finite value"));
        }
        pairs.push(pair);
    }
    Ok((header, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opsets::{builtin_f1, pauli};
    use crate::qcore::{measure_exact, DensityMatrix};

    fn sz_set() -> OperatorSet {
        OperatorSet::new(vec![pauli(3)], vec!["Z".into()]).unwrap()
    }

    #[test]
    fn thermal_params_decomposition() {
        let t = ThermalParams(vec![3.0, 4.0]);
        assert_eq!(t.beta(), 5.0);
        assert_eq!(t.direction().unwrap(), vec![0.6, 0.8]);
        assert!(ThermalParams(vec![0.0, 0.0]).direction().is_none());
    }

    #[test]
    fn even_distribution() {
        assert_eq!(distribution_even(4).unwrap().weights(), &[0.25; 4]);
        let d = distribution_even(100).unwrap();
        assert!(d.weights().iter().all(|&w| (w - 0.01).abs() < 1e-15));
        assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(distribution_even(0).is_err());
    }

    #[test]
    fn beta_distribution_cases() {
        assert_eq!(distribution_beta(&[1.0, 1.0]).unwrap().weights(), &[0.5, 0.5]);
        assert_eq!(distribution_beta(&[3.0, 1.0]).unwrap().weights(), &[0.75, 0.25]);
        assert!(matches!(distribution_beta(&[0.0, 0.0]), Err(Error::Contract(_))));
        assert!(distribution_beta(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn flat_distribution_hand_example() {
        let mut lb = vec![10.0; 9];
        lb.extend([0.0, 1.0, 1.0]);
        let flat = flatten(&lb);
        let global: f64 = (9.0 * 10.0 + 9.0 + 2.0) / 12.0;
        assert!((global - 101.0 / 12.0).abs() < 1e-15);
        let mut expected = vec![10.0; 9];
        expected.push(9.0);
        expected.extend([global, global]);
        for (a, b) in flat.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{flat:?}");
        }
        let p = distribution_flat(&lb).unwrap();
        let total: f64 = expected.iter().sum();
        for (w, e) in p.weights().iter().zip(&expected) {
            assert!((w - e / total).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_constant_profile_is_uniform() {
        let p = distribution_flat(&[2.0; 7]).unwrap();
        assert!(p.weights().iter().all(|w| (w - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn flat_short_profile_uses_all_entries_in_first_step() {
        // N = 3 < 10: head mean is (4 + 1 + 1)/3 = 2, giving (4, 2, 2); the
        // global mean 8/3 then lifts both 2s.
        let v = flatten(&[4.0, 1.0, 1.0]);
        let g = 8.0 / 3.0;
        assert_eq!(v, vec![4.0, g, g]);
        assert_eq!(distribution_flat(&[5.0]).unwrap().weights(), &[1.0]);
    }

    #[test]
    fn allocation_is_exact() {
        let d = BetaDistribution::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert_eq!(d.allocate(10), vec![4, 3, 3]);
        assert_eq!(d.allocate(3), vec![1, 1, 1]);
        let d = BetaDistribution::new(vec![0.75, 0.25]).unwrap();
        assert_eq!(d.allocate(7), vec![5, 2]);
    }

    #[test]
    fn point_mass_sampling_stays_in_interval() {
        let d = BetaDistribution::point_mass(10, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let t = sample_params(&d, 3, &mut rng);
            let b = t.beta();
            assert!(b > 2.0 && b <= 3.0 + 1e-12, "{b}");
            let a = t.direction().unwrap();
            assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interval_histogram_matches_weights() {
        let w = vec![0.1, 0.2, 0.3, 0.4];
        let d = BetaDistribution::new(w.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000usize;
        let mut hist = [0usize; 4];
        for _ in 0..n {
            let b = sample_params(&d, 2, &mut rng).beta();
            let i = (b.ceil() as usize) - 1;
            assert!(b > 0.0 && b <= 4.0);
            hist[i] += 1;
        }
        for (i, &p) in w.iter().enumerate() {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((hist[i] as f64 - n as f64 * p).abs() < 3.0 * sd, "{hist:?}");
        }
    }

    #[test]
    fn roughness_profile_is_seeded_and_bounded() {
        let f = builtin_f1();
        let a = roughness_profile(&f, 5, 1, 9).unwrap();
        let b = roughness_profile(&f, 5, 1, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&x| (0.0..=2.0 / 3.0).contains(&x)));
        assert!(roughness_profile(&f, 0, 1, 9).is_err());
    }

    #[test]
    fn roughness_profile_near_pure_at_high_beta() {
        let p = roughness_profile(&builtin_f1(), 100, 20, 1).unwrap();
        assert!(p[99] < 1e-3, "{}", p[99]);
        assert!(p[0] > p[10]);
    }

    #[test]
    fn roughness_profile_single_qubit_integral() {
        // For H = ±β σ_z the gap is 1 - e^β/(e^β + e^-β) = 1/(1 + e^{2β})
        // regardless of sign; average over β ~ U(0, 1] by Simpson's rule.
        let g = |b: f64| 1.0 / (1.0 + (2.0 * b).exp());
        let n = 1000;
        let h = 1.0 / n as f64;
        let mut s = g(0.0) + g(1.0);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k as f64 * h);
        }
        let oracle = s * h / 3.0;
        assert!((oracle - 0.2832).abs() < 1e-3);
        let p = roughness_profile(&sz_set(), 1, 20_000, 4).unwrap();
        // Standard deviation of the integrand is about 0.12.
        assert!((p[0] - oracle).abs() < 4.0 * 0.12 / (20_000f64).sqrt(), "{} vs {oracle}", p[0]);
    }

    #[test]
    fn dataset_pairs_round_trip_through_forward_model() {
        let f = builtin_f1();
        let d = distribution_even(10).unwrap();
        let pairs = generate_dataset(&f, &d, 50, None, 2).unwrap();
        assert_eq!(pairs.len(), 50);
        for p in &pairs {
            let rho = thermal_state(&f, p.theta.theta()).unwrap();
            assert_eq!(measure_exact(&rho, &f).unwrap(), p.c.0);
            assert!(p.theta.beta() > 0.0 && p.theta.beta() <= 10.0 + 1e-12);
        }
        assert_eq!(pairs, generate_dataset(&f, &d, 50, None, 2).unwrap());
    }

    #[test]
    fn zero_theta_dataset() {
        // A single pair made from θ = 0 measures tr(F_i)/d.
        let f = builtin_f1();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = make_pair(&f, ThermalParams(vec![0.0; 3]), None, &mut rng).unwrap();
        let expect = measure_exact(&DensityMatrix::maximally_mixed(3), &f).unwrap();
        assert_eq!(p.c.0, expect);
    }

    #[test]
    fn dataset_file_round_trip_and_errors() {
        let f = builtin_f1();
        let pairs = generate_dataset(&f, &distribution_even(5).unwrap(), 20, None, 5).unwrap();
        let header = DatasetHeader::new(3, 3, "f1");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&path, &header, &pairs).unwrap();
        let (h, back) = load_dataset(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, pairs);

        let empty = dir.path().join("e.jsonl");
        save_dataset(&empty, &header, &[]).unwrap();
        let text = std::fs::read_to_string(&empty).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(load_dataset(&empty).unwrap().1.is_empty());

        let full = std::fs::read_to_string(&path).unwrap();
        let cut = &full[..full.len() - 15];
        let err = read_dataset(cut.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 21),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_dataset("".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
