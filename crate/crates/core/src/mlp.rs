//! Fully-connected feed-forward regressor trained with Adam.
//!
//! Hidden layers use one activation, the output layer is linear. Batches are
//! row-major `batch x features` arrays and each layer computes
//! `Z = A W^T + b` with `W` stored as `out x in`.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{stream, TrainingPair};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "qipmlp-v1";
pub const CHECKPOINT_FORMAT: &str = "qipckpt-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|x| x.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::contract(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mae,
    Mse,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(Loss::Mae),
            "mse" => Ok(Loss::Mse),
            other => Err(Error::contract(format!("unknown loss {other:?}"))),
        }
    }
}

/// `Σ|e_i| / m`.
pub fn loss_mae(e: &[f64]) -> f64 {
    if e.is_empty() {
        return 0.0;
    }
    e.iter().map(|x| x.abs()).sum::<f64>() / e.len() as f64
}

/// `Σ e_i² / m`.
pub fn loss_mse(e: &[f64]) -> f64 {
    if e.is_empty() {
        return 0.0;
    }
    e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64
}

impl Loss {
    pub fn eval(self, e: &[f64]) -> f64 {
        match self {
            Loss::Mae => loss_mae(e),
            Loss::Mse => loss_mse(e),
        }
    }
}

/// Weights or gradients: one `out x in` matrix and one bias vector per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Params {
    fn zeros_like(other: &Params) -> Self {
        Self {
            weights: other.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: other.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights (row-major) then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// The regressor `Φ: R^m -> R^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Params,
}

impl Mlp {
    /// Random initialization, uniform on `±sqrt(6 / (fan_in + fan_out))`,
    /// biases zero.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let mut rng = stream(seed, 0);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..limit));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params: Params { weights, biases },
        })
    }

    pub fn from_params(sizes: &[usize], activation: Activation, params: Params) -> Result<Self> {
        check_sizes(sizes)?;
        if params.weights.len() != sizes.len() - 1 || params.biases.len() != sizes.len() - 1 {
            return Err(Error::contract("parameter layer count does not match sizes"));
        }
        for (l, pair) in sizes.windows(2).enumerate() {
            if params.weights[l].dim() != (pair[1], pair[0]) || params.biases[l].len() != pair[1] {
                return Err(Error::contract(format!("layer {l} parameter shapes do not match sizes")));
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(Error::contract(format!(
                "network input has length {} but the network expects {}",
                x.len(),
                self.input_size()
            )));
        }
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over the rows of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_size() {
            return Err(Error::contract(format!(
                "network input has {} columns but the network expects {}",
                x.ncols(),
                self.input_size()
            )));
        }
        let mut a = x.to_owned();
        let last = self.params.weights.len() - 1;
        for (l, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if l < last {
                self.activation.apply(&mut z);
            }
            a = z;
        }
        Ok(a)
    }

    /// Activations of every layer, input included.
    fn activations(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_owned());
        let last = self.params.weights.len() - 1;
        for (l, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            if l < last {
                self.activation.apply(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    /// Mean per-sample loss over the rows of `(x, y)` and its exact gradient.
    /// The MAE subgradient at a zero residual is 0.
    pub fn batch_gradient(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, loss: Loss) -> Result<(f64, Params)> {
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(Error::contract("batch inputs and targets must be non-empty with equal row counts"));
        }
        if x.ncols() != self.input_size() || y.ncols() != self.output_size() {
            return Err(Error::contract("batch shape does not match the network"));
        }
        let acts = self.activations(x);
        let out = &acts[acts.len() - 1];
        let err = out - &y;
        let (rows, m) = err.dim();
        let norm = (rows * m) as f64;
        let (value, mut delta) = match loss {
            Loss::Mae => (
                err.iter().map(|e| e.abs()).sum::<f64>() / norm,
                err.mapv(|e| {
                    if e > 0.0 {
                        1.0 / norm
                    } else if e < 0.0 {
                        -1.0 / norm
                    } else {
                        0.0
                    }
                }),
            ),
            Loss::Mse => (err.iter().map(|e| e * e).sum::<f64>() / norm, err.mapv(|e| 2.0 * e / norm)),
        };

        let mut grad = Params::zeros_like(&self.params);
        for l in (0..self.params.weights.len()).rev() {
            grad.weights[l] = delta.t().dot(&acts[l]);
            grad.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.params.weights[l]);
                let act = self.activation;
                Zip::from(&mut prev)
                    .and(&acts[l])
                    .for_each(|d, &a| *d *= act.derivative_from_output(a));
                delta = prev;
            }
        }
        Ok((value, grad))
    }

    /// Loss and gradient for a single example.
    pub fn backward(&self, x: &[f64], target: &[f64], loss: Loss) -> Result<(f64, Params)> {
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::contract(e.to_string()))?;
        let yv = ArrayView2::from_shape((1, target.len()), target).map_err(|e| Error::contract(e.to_string()))?;
        self.batch_gradient(xv, yv, loss)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelDoc::from(self)).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        doc.into_mlp()
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::contract("a network needs at least an input and an output layer"));
    }
    if sizes.contains(&0) {
        return Err(Error::contract("layer sizes must be positive"));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    sizes: Vec<usize>,
    activation: Activation,
    /// Per layer, `out` rows of `in` entries.
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl From<&Mlp> for ModelDoc {
    fn from(net: &Mlp) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            sizes: net.sizes.clone(),
            activation: net.activation,
            weights: net
                .params
                .weights
                .iter()
                .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: net.params.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }
}

impl ModelDoc {
    fn into_mlp(self) -> Result<Mlp> {
        if self.format != MODEL_FORMAT {
            return Err(Error::parse(1, format!("unsupported model format {:?}", self.format)));
        }
        let mut weights = Vec::with_capacity(self.weights.len());
        for (l, rows) in self.weights.into_iter().enumerate() {
            let nrows = rows.len();
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::parse(1, format!("layer {l} weight rows are ragged")));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            weights.push(Array2::from_shape_vec((nrows, ncols), flat).map_err(|e| Error::parse(1, e.to_string()))?);
        }
        let biases = self.biases.into_iter().map(Array1::from_vec).collect();
        Mlp::from_params(&self.sizes, self.activation, Params { weights, biases })
            .map_err(|e| Error::parse(1, e.to_string()))
    }
}

pub fn save_model(net: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, net.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Mlp> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Mlp::from_json(&s)
}

/// Adam optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Params,
    second: Params,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: Params::zeros_like(&net.params),
            second: Params::zeros_like(&net.params),
        }
    }

    /// One bias-corrected Adam update at learning rate `lr`.
    pub fn update(&mut self, net: &mut Mlp, grad: &Params, lr: f64) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let step_size = lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        let kernel = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
        };
        for l in 0..net.params.weights.len() {
            Zip::from(&mut net.params.weights[l])
                .and(&grad.weights[l])
                .and(&mut self.first.weights[l])
                .and(&mut self.second.weights[l])
                .for_each(kernel);
            Zip::from(&mut net.params.biases[l])
                .and(&grad.biases[l])
                .and(&mut self.first.biases[l])
                .and(&mut self.second.biases[l])
                .for_each(kernel);
        }
    }

    /// Apply one update at the configured learning rate.
    pub fn step(&mut self, net: &mut Mlp, grad: &Params) {
        let lr = self.learning_rate;
        self.update(net, grad, lr);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate at the last epoch as a fraction of `learning_rate`;
    /// the rate decays geometrically between. 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub loss: Loss,
    pub shuffle_seed: u64,
    /// Fraction of the data held out for a per-epoch validation loss.
    pub holdout: f64,
    /// Above 1, each mini-batch gradient is split across this many rayon
    /// tasks. Results stay deterministic for a fixed worker count but differ
    /// in the last bits from the single-worker path.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 40_000,
            epochs: 300,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            loss: Loss::Mae,
            shuffle_seed: 0,
            holdout: 0.0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::contract("batch size and epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::contract("final learning-rate fraction must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::contract("holdout fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_fraction == 1.0 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * self.final_lr_fraction.powf(t)
    }
}

/// Inputs and targets as row-aligned matrices.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl TrainData {
    pub fn from_pairs(pairs: &[TrainingPair]) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::contract("empty training set"))?;
        let (mi, mo) = (first.c.len(), first.theta.len());
        let mut inputs = Array2::zeros((pairs.len(), mi));
        let mut targets = Array2::zeros((pairs.len(), mo));
        for (k, p) in pairs.iter().enumerate() {
            if p.c.len() != mi || p.theta.len() != mo {
                return Err(Error::contract(format!("pair {k} has inconsistent lengths")));
            }
            inputs.row_mut(k).assign(&Array1::from(p.c.values().to_vec()));
            targets.row_mut(k).assign(&Array1::from(p.theta.theta().to_vec()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (self.inputs.select(Axis(0), idx), self.targets.select(Axis(0), idx))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    /// Holdout loss per epoch (empty without a holdout).
    pub holdout_history: Vec<f64>,
}

/// Trains for `cfg.epochs` epochs from scratch.
pub fn train(net: &mut Mlp, data: &TrainData, cfg: &TrainConfig, adam: &mut AdamState) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    train_epochs(net, data, cfg, adam, 0..cfg.epochs, &mut report, |_, _, _, _| Ok(()))?;
    Ok(report)
}

/// Runs the epochs in `epochs`, appending to `report`. Epoch `e` always uses
/// shuffle stream `(shuffle_seed, e)` and learning rate
/// [`TrainConfig::learning_rate_at`], so a run resumed from a checkpoint
/// continues exactly where it stopped. `after_epoch` sees the state after
/// every epoch.
pub fn train_epochs<F>(
    net: &mut Mlp,
    data: &TrainData,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    epochs: Range<usize>,
    report: &mut TrainReport,
    mut after_epoch: F,
) -> Result<()>
where
    F: FnMut(usize, &Mlp, &AdamState, &TrainReport) -> Result<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    if data.inputs.ncols() != net.input_size() || data.targets.ncols() != net.output_size() {
        return Err(Error::contract(format!(
            "data has {} inputs / {} targets but the network is {:?}",
            data.inputs.ncols(),
            data.targets.ncols(),
            net.sizes()
        )));
    }

    // Fixed split, independent of the epoch streams.
    let mut all: Vec<usize> = (0..data.len()).collect();
    let n_hold = (cfg.holdout * data.len() as f64).floor() as usize;
    if n_hold > 0 {
        all.shuffle(&mut stream(cfg.shuffle_seed, u64::MAX));
    }
    let (hold_idx, train_idx) = all.split_at(n_hold);
    if train_idx.is_empty() {
        return Err(Error::contract("holdout leaves no training data"));
    }
    let holdout = (!hold_idx.is_empty()).then(|| data.gather(hold_idx));
    let mut order = train_idx.to_vec();

    for epoch in epochs {
        let mut rng = stream(cfg.shuffle_seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate_at(epoch);
        let mut weighted = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.gather(idx);
            let (value, grad) = gradient(net, x.view(), y.view(), cfg)?;
            if !value.is_finite() || !grad.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            adam.update(net, &grad, lr);
            weighted += value * idx.len() as f64;
        }
        report.loss_history.push(weighted / order.len() as f64);
        if let Some((hx, hy)) = &holdout {
            let pred = net.forward_batch(hx.view())?;
            let err = (&pred - hy).into_raw_vec_and_offset().0;
            report.holdout_history.push(cfg.loss.eval(&err));
        }
        after_epoch(epoch, net, adam, report)?;
    }
    Ok(())
}

fn gradient(net: &Mlp, x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &TrainConfig) -> Result<(f64, Params)> {
    let rows = x.nrows();
    if cfg.workers <= 1 || rows < 2 * cfg.workers {
        return net.batch_gradient(x, y, cfg.loss);
    }
    let chunk = rows.div_ceil(cfg.workers);
    let parts: Vec<(usize, f64, Params)> = (0..cfg.workers)
        .into_par_iter()
        .filter_map(|k| {
            let lo = k * chunk;
            let hi = ((k + 1) * chunk).min(rows);
            (lo < hi).then(|| {
                net.batch_gradient(x.slice(s![lo..hi, ..]), y.slice(s![lo..hi, ..]), cfg.loss)
                    .map(|(v, g)| (hi - lo, v, g))
            })
        })
        .collect::<Result<_>>()?;
    let mut total = Params::zeros_like(net.params());
    let mut value = 0.0;
    for (n, v, mut g) in parts {
        let w = n as f64 / rows as f64;
        g.scale(w);
        total.add_assign(&g);
        value += v * w;
    }
    Ok((value, total))
}

/// Everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: Mlp,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub report: TrainReport,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    model: serde_json::Value,
    adam: AdamDoc,
    epochs_done: usize,
    report: TrainReport,
}

#[derive(Serialize, Deserialize)]
struct AdamDoc {
    step: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    first: Vec<f64>,
    second: Vec<f64>,
}

fn unflatten(template: &Params, flat: &[f64]) -> Result<Params> {
    if flat.len() != template.count() {
        return Err(Error::parse(1, "optimizer moment length does not match the model"));
    }
    let mut out = Params::zeros_like(template);
    let mut pos = 0;
    for (w, b) in out.weights.iter_mut().zip(out.biases.iter_mut()) {
        for x in w.iter_mut() {
            *x = flat[pos];
            pos += 1;
        }
        for x in b.iter_mut() {
            *x = flat[pos];
            pos += 1;
        }
    }
    Ok(out)
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_string(),
            model: serde_json::to_value(ModelDoc::from(&self.net)).expect("model serialization cannot fail"),
            adam: AdamDoc {
                step: self.adam.step,
                learning_rate: self.adam.learning_rate,
                beta1: self.adam.beta1,
                beta2: self.adam.beta2,
                epsilon: self.adam.epsilon,
                first: self.adam.first.flatten(),
                second: self.adam.second.flatten(),
            },
            epochs_done: self.epochs_done,
            report: self.report.clone(),
        };
        serde_json::to_string(&doc).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(s).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(1, format!("unsupported checkpoint format {:?}", doc.format)));
        }
        let model: ModelDoc = serde_json::from_value(doc.model).map_err(|e| Error::parse(1, e.to_string()))?;
        let net = model.into_mlp()?;
        let a = doc.adam;
        let adam = AdamState {
            step: a.step,
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            first: unflatten(&net.params, &a.first)?,
            second: unflatten(&net.params, &a.second)?,
        };
        Ok(Self {
            net,
            adam,
            epochs_done: doc.epochs_done,
            report: doc.report,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
