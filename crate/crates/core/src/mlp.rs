//! Multilayer feedforward network with sigmoid units, trained by online
//! backpropagation (generalized Delta rule) with a momentum term.
//!
//! Layer `0` is the input layer and already carries its bias entry (the last
//! input is a constant). Every later layer's activations get a constant `1.0`
//! appended before feeding the next layer, so each weight matrix for `l > 0`
//! has one extra trailing column holding the unit offsets.
//!
//! The per-sample error is `E = 1/2 * sum_j (output_j - desired_j)^2`; an
//! epoch's MSE is the mean of `E` over its samples.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// First line of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "MINESCAN-MLP v1";

/// Range freshly initialized weights are drawn from.
pub const INIT_WEIGHT_RANGE: (f64, f64) = (0.01, 0.03);

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("invalid layer sizes {0:?}: need at least two layers, each with at least one unit")]
    InvalidLayers(Vec<usize>),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint version mismatch: expected {CHECKPOINT_MAGIC:?}, found {0:?}")]
    Version(String),
    #[error("checkpoint parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Dense row-major matrix of shape `rows x cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MlpError> {
        if data.len() != rows * cols {
            return Err(MlpError::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible across runs.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Per-layer buffers shaped like a network's weights. Used both for
/// gradients and for the previous step's weight changes (momentum memory).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBuffers {
    layers: Vec<Matrix>,
}

impl WeightBuffers {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|m| m.data.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    fn check_shape(&self, net: &Network) -> Result<(), MlpError> {
        let ok = self.layers.len() == net.weights.len()
            && self
                .layers
                .iter()
                .zip(&net.weights)
                .all(|(a, b)| a.same_shape(b));
        if ok {
            Ok(())
        } else {
            Err(MlpError::ShapeMismatch(
                "buffers do not match the network's weight shapes".into(),
            ))
        }
    }
}

pub type Gradients = WeightBuffers;

/// Activations of every layer from one forward pass; index 0 is the input.
/// Bias constants appended between layers are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("at least two layers")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    slope: f64,
    weights: Vec<Matrix>,
}

impl Network {
    /// Fan-in of the weight matrix feeding layer `l + 1`.
    fn fan_in(layer_sizes: &[usize], l: usize) -> usize {
        if l == 0 {
            layer_sizes[0]
        } else {
            layer_sizes[l] + 1
        }
    }

    fn validate_sizes(layer_sizes: &[usize]) -> Result<(), MlpError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(MlpError::InvalidLayers(layer_sizes.to_vec()));
        }
        Ok(())
    }

    /// Network with every weight drawn uniformly from [`INIT_WEIGHT_RANGE`].
    pub fn init(layer_sizes: &[usize], slope: f64, rng_seed: u64) -> Result<Self, MlpError> {
        Self::validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let (lo, hi) = INIT_WEIGHT_RANGE;
        let weights = (0..layer_sizes.len() - 1)
            .map(|l| {
                let (rows, cols) = (layer_sizes[l + 1], Self::fan_in(layer_sizes, l));
                let data = (0..rows * cols).map(|_| rng.gen_range(lo..=hi)).collect();
                Matrix { rows, cols, data }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            slope,
            weights,
        })
    }

    /// Builds a network from explicit weights; shapes are validated.
    pub fn from_weights(layer_sizes: &[usize], slope: f64, weights: Vec<Matrix>) -> Result<Self, MlpError> {
        Self::validate_sizes(layer_sizes)?;
        if weights.len() != layer_sizes.len() - 1 {
            return Err(MlpError::ShapeMismatch(format!(
                "{} weight matrices for {} layers",
                weights.len(),
                layer_sizes.len()
            )));
        }
        for (l, w) in weights.iter().enumerate() {
            let (rows, cols) = (layer_sizes[l + 1], Self::fan_in(layer_sizes, l));
            if w.rows != rows || w.cols != cols {
                return Err(MlpError::ShapeMismatch(format!(
                    "layer {l} weights are {}x{}, expected {rows}x{cols}",
                    w.rows, w.cols
                )));
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            slope,
            weights,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    #[inline]
    fn sigmoid(&self, v: f64) -> f64 {
        1.0 / (1.0 + (-self.slope * v).exp())
    }

    /// Sigmoid outputs of every layer for `input`.
    pub fn forward(&self, input: &[f64]) -> Result<Activations, MlpError> {
        if input.len() != self.input_len() {
            return Err(MlpError::LengthMismatch {
                expected: self.input_len(),
                actual: input.len(),
            });
        }
        let mut layers = Vec::with_capacity(self.layer_sizes.len());
        layers.push(input.to_vec());
        for (l, w) in self.weights.iter().enumerate() {
            let prev = &layers[l];
            let out: Vec<f64> = (0..w.rows)
                .map(|r| {
                    let row = w.row(r);
                    let v = if l == 0 {
                        dot(row, prev)
                    } else {
                        dot(&row[..prev.len()], prev) + row[prev.len()]
                    };
                    self.sigmoid(v)
                })
                .collect();
            debug_assert!(
                out.iter().all(|a| a.is_finite() && (0.0..=1.0).contains(a)),
                "activation left [0, 1]"
            );
            layers.push(out);
        }
        Ok(Activations { layers })
    }

    /// Output layer activations only.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, MlpError> {
        let mut acts = self.forward(input)?;
        Ok(acts.layers.pop().expect("at least two layers"))
    }

    /// Gradients of the per-sample error with respect to every weight.
    pub fn backward(&self, acts: &Activations, desired: &[f64]) -> Result<Gradients, MlpError> {
        let mut grads = WeightBuffers::zeros_like(self);
        self.backward_into(acts, desired, &mut grads)?;
        Ok(grads)
    }

    /// As [`Network::backward`], overwriting a preallocated buffer.
    pub fn backward_into(
        &self,
        acts: &Activations,
        desired: &[f64],
        grads: &mut Gradients,
    ) -> Result<(), MlpError> {
        grads.check_shape(self)?;
        let shapes_ok = acts.layers.len() == self.layer_sizes.len()
            && acts
                .layers
                .iter()
                .zip(&self.layer_sizes)
                .all(|(a, &n)| a.len() == n);
        if !shapes_ok {
            return Err(MlpError::ShapeMismatch(
                "activations do not come from this network".into(),
            ));
        }
        if desired.len() != self.output_len() {
            return Err(MlpError::LengthMismatch {
                expected: self.output_len(),
                actual: desired.len(),
            });
        }

        let a = self.slope;
        // Error signal at the output: dE/dv = (o - d) * phi'(v).
        let mut delta: Vec<f64> = acts
            .output()
            .iter()
            .zip(desired)
            .map(|(&o, &d)| (o - d) * a * o * (1.0 - o))
            .collect();

        for l in (0..self.weights.len()).rev() {
            let input = &acts.layers[l];
            let g = &mut grads.layers[l];
            for (r, &d) in delta.iter().enumerate() {
                let row = g.row_mut(r);
                for (gi, &x) in row.iter_mut().zip(input) {
                    *gi = d * x;
                }
                if l > 0 {
                    row[input.len()] = d;
                }
            }
            if l > 0 {
                let w = &self.weights[l];
                delta = input
                    .iter()
                    .enumerate()
                    .map(|(j, &h)| {
                        let back: f64 = delta.iter().enumerate().map(|(k, &dk)| w.get(k, j) * dk).sum();
                        back * a * h * (1.0 - h)
                    })
                    .collect();
            }
        }
        Ok(())
    }

    /// Momentum step: `dw(t) = -lr * grad + momentum * dw(t-1)`, `w += dw(t)`.
    /// `deltas` holds `dw(t-1)` on entry and `dw(t)` on return.
    pub fn apply_update(
        &mut self,
        grads: &Gradients,
        deltas: &mut WeightBuffers,
        learning_rate: f64,
        momentum: f64,
    ) -> Result<(), MlpError> {
        grads.check_shape(self)?;
        deltas.check_shape(self)?;
        for ((w, g), dw) in self
            .weights
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut deltas.layers)
        {
            for ((wi, &gi), di) in w.data.iter_mut().zip(&g.data).zip(dw.data.iter_mut()) {
                let step = -learning_rate * gi + momentum * *di;
                *di = step;
                *wi += step;
            }
        }
        Ok(())
    }

    /// Backward pass and momentum update in a single sweep over each layer.
    /// Produces the same weights as [`Network::backward_into`] followed by
    /// [`Network::apply_update`] without materializing the gradients.
    pub fn train_step(
        &mut self,
        acts: &Activations,
        desired: &[f64],
        deltas: &mut WeightBuffers,
        learning_rate: f64,
        momentum: f64,
    ) -> Result<(), MlpError> {
        deltas.check_shape(self)?;
        if desired.len() != self.output_len() || acts.output().len() != self.output_len() {
            return Err(MlpError::LengthMismatch {
                expected: self.output_len(),
                actual: desired.len(),
            });
        }
        let a = self.slope;
        let mut delta: Vec<f64> = acts
            .output()
            .iter()
            .zip(desired)
            .map(|(&o, &d)| (o - d) * a * o * (1.0 - o))
            .collect();

        for l in (0..self.weights.len()).rev() {
            let input = &acts.layers[l];
            // The next error signal needs this layer's weights before the step.
            let next = if l > 0 {
                let w = &self.weights[l];
                Some(
                    input
                        .iter()
                        .enumerate()
                        .map(|(j, &h)| {
                            let back: f64 = delta.iter().enumerate().map(|(k, &dk)| w.get(k, j) * dk).sum();
                            back * a * h * (1.0 - h)
                        })
                        .collect::<Vec<f64>>(),
                )
            } else {
                None
            };
            let w = &mut self.weights[l];
            let dw = &mut deltas.layers[l];
            for (r, &d) in delta.iter().enumerate() {
                let w_row = w.row_mut(r);
                let d_row = dw.row_mut(r);
                for ((wi, di), &x) in w_row.iter_mut().zip(d_row.iter_mut()).zip(input) {
                    let step = -learning_rate * (d * x) + momentum * *di;
                    *di = step;
                    *wi += step;
                }
                if l > 0 {
                    let (wi, di) = (&mut w_row[input.len()], &mut d_row[input.len()]);
                    let step = -learning_rate * d + momentum * *di;
                    *di = step;
                    *wi += step;
                }
            }
            if let Some(next) = next {
                delta = next;
            }
        }
        Ok(())
    }
}

/// Per-sample error, `1/2 * sum_j (output_j - desired_j)^2`.
pub fn sample_mse(output: &[f64], desired: &[f64]) -> Result<f64, MlpError> {
    if output.len() != desired.len() {
        return Err(MlpError::LengthMismatch {
            expected: desired.len(),
            actual: output.len(),
        });
    }
    Ok(0.5
        * output
            .iter()
            .zip(desired)
            .map(|(o, d)| (o - d) * (o - d))
            .sum::<f64>())
}

/// A training example: an input vector and its one-hot target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub desired: Vec<f64>,
}

impl Sample {
    pub fn one_hot(input: Vec<f64>, class_index: usize, class_count: usize) -> Self {
        assert!(class_index < class_count, "class index out of range");
        let mut desired = vec![0.0; class_count];
        desired[class_index] = 1.0;
        Self { input, desired }
    }

    pub fn class_index(&self) -> Option<usize> {
        self.desired.iter().position(|&d| d == 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub mse_target: f64,
    pub max_epochs: usize,
    /// Training is declared diverged after this many consecutive epochs
    /// either above `divergence_factor` times the running minimum MSE or
    /// with an MSE identical to the previous epoch's (fully saturated units
    /// no longer learn).
    pub divergence_window: usize,
    pub divergence_factor: f64,
    pub rng_seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.2,
            mse_target: 1e-5,
            max_epochs: 20_000,
            divergence_window: 50,
            divergence_factor: 10.0,
            rng_seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    Diverged,
    EpochLimit,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::Diverged => "diverged",
            Outcome::EpochLimit => "epoch-limit",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingReport {
    pub epochs_run: usize,
    pub mse_history: Vec<f64>,
    pub outcome: Outcome,
}

impl TrainingReport {
    /// `epoch,mse` CSV, one row per epoch starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mse\n");
        for (i, mse) in self.mse_history.iter().enumerate() {
            let _ = writeln!(out, "{},{:e}", i + 1, mse);
        }
        out
    }
}

/// Mutable state carried across epochs: the permutation generator and the
/// momentum memory.
pub struct TrainState {
    rng: ChaCha8Rng,
    deltas: WeightBuffers,
    order: Vec<usize>,
}

impl TrainState {
    pub fn new(net: &Network, rng_seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            deltas: WeightBuffers::zeros_like(net),
            order: Vec::new(),
        }
    }

    /// Sample order used by the most recent epoch.
    pub fn last_order(&self) -> &[usize] {
        &self.order
    }
}

/// One pass over `samples` in a fresh permutation with a weight update after
/// every sample. Returns the mean per-sample error, measured on each
/// sample's forward pass before its update.
pub fn train_epoch(
    net: &mut Network,
    samples: &[Sample],
    params: &TrainParams,
    state: &mut TrainState,
) -> Result<f64, MlpError> {
    if samples.is_empty() {
        return Err(MlpError::LengthMismatch {
            expected: 1,
            actual: 0,
        });
    }
    state.order.clear();
    state.order.extend(0..samples.len());
    state.order.shuffle(&mut state.rng);

    let mut total = 0.0;
    for &i in &state.order {
        let sample = &samples[i];
        let acts = net.forward(&sample.input)?;
        total += sample_mse(acts.output(), &sample.desired)?;
        net.train_step(
            &acts,
            &sample.desired,
            &mut state.deltas,
            params.learning_rate,
            params.momentum,
        )?;
    }
    Ok(total / samples.len() as f64)
}

/// Divergence rules applied to the sequence of epoch MSEs: a non-finite
/// MSE, `window` consecutive epochs at or above `factor` times the running
/// minimum, or `window` consecutive epochs repeating the previous MSE
/// exactly (every unit saturated, so the weights no longer move).
#[derive(Clone, Debug)]
pub struct DivergenceMonitor {
    window: usize,
    factor: f64,
    running_min: f64,
    above: usize,
    frozen: usize,
    previous: f64,
}

impl DivergenceMonitor {
    pub fn new(window: usize, factor: f64) -> Self {
        Self {
            window,
            factor,
            running_min: f64::INFINITY,
            above: 0,
            frozen: 0,
            previous: f64::NAN,
        }
    }

    /// Records one epoch's MSE; true once training counts as diverged.
    pub fn observe(&mut self, mse: f64) -> bool {
        if !mse.is_finite() {
            return true;
        }
        if self.running_min.is_finite() && mse >= self.factor * self.running_min {
            self.above += 1;
        } else {
            self.above = 0;
        }
        if mse == self.previous {
            self.frozen += 1;
        } else {
            self.frozen = 0;
        }
        self.running_min = self.running_min.min(mse);
        self.previous = mse;
        self.above >= self.window || self.frozen >= self.window
    }
}

/// Trains until the epoch MSE drops below the target, training diverges, or
/// the epoch limit is reached.
pub fn train(net: &mut Network, samples: &[Sample], params: &TrainParams) -> Result<TrainingReport, MlpError> {
    train_with_progress(net, samples, params, |_, _| {})
}

/// As [`train`], calling `progress(epoch, mse)` after every epoch.
pub fn train_with_progress(
    net: &mut Network,
    samples: &[Sample],
    params: &TrainParams,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainingReport, MlpError> {
    let mut state = TrainState::new(net, params.rng_seed);
    let mut monitor = DivergenceMonitor::new(params.divergence_window, params.divergence_factor);
    let mut history = Vec::new();
    let mut outcome = Outcome::EpochLimit;

    for epoch in 1..=params.max_epochs {
        let mse = train_epoch(net, samples, params, &mut state)?;
        history.push(mse);
        progress(epoch, mse);

        if mse < params.mse_target {
            outcome = Outcome::Converged;
            break;
        }
        if monitor.observe(mse) {
            outcome = Outcome::Diverged;
            break;
        }
    }

    Ok(TrainingReport {
        epochs_run: history.len(),
        mse_history: history,
        outcome,
    })
}

/// Largest relative disagreement between [`Network::backward`] and central
/// finite differences of the per-sample error, over every weight.
pub fn gradient_check(net: &Network, sample: &Sample, eps: f64) -> Result<f64, MlpError> {
    let acts = net.forward(&sample.input)?;
    let analytic = net.backward(&acts, &sample.desired)?;
    let error_at = |n: &Network| -> Result<f64, MlpError> {
        sample_mse(&n.predict(&sample.input)?, &sample.desired)
    };

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for l in 0..net.weights.len() {
        for idx in 0..net.weights[l].data.len() {
            let w0 = net.weights[l].data[idx];
            probe.weights[l].data[idx] = w0 + eps;
            let plus = error_at(&probe)?;
            probe.weights[l].data[idx] = w0 - eps;
            let minus = error_at(&probe)?;
            probe.weights[l].data[idx] = w0;

            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic.layers[l].data[idx];
            let denom = exact.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Renders the textual checkpoint: magic line, `slope n0 n1 ...`, then one
/// line per weight row. Floats use Rust's shortest round-trip formatting.
pub fn checkpoint_string(net: &Network) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    let _ = write!(out, "{:e}", net.slope);
    for n in &net.layer_sizes {
        let _ = write!(out, " {n}");
    }
    out.push('\n');
    for w in &net.weights {
        for r in 0..w.rows {
            let mut first = true;
            for v in w.row(r) {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:e}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_checkpoint(text: &str) -> Result<Network, MlpError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let parse_err = |line, msg: String| MlpError::Parse { line, msg };

    let (_, magic) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty checkpoint".into()))?;
    if magic.trim_end() != CHECKPOINT_MAGIC {
        return Err(MlpError::Version(magic.to_string()));
    }

    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing header line".into()))?;
    let mut fields = header.split_whitespace();
    let slope: f64 = fields
        .next()
        .ok_or_else(|| parse_err(ln, "missing slope".into()))?
        .parse()
        .map_err(|e| parse_err(ln, format!("bad slope: {e}")))?;
    let layer_sizes = fields
        .map(|f| f.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| parse_err(ln, format!("bad layer size: {e}")))?;
    Network::validate_sizes(&layer_sizes)?;

    let mut last_line = ln;
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    for l in 0..layer_sizes.len() - 1 {
        let (rows, cols) = (layer_sizes[l + 1], Network::fan_in(&layer_sizes, l));
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(last_line + 1, format!("truncated: layer {l} needs {rows} rows")))?;
            last_line = ln;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|e| parse_err(ln, format!("bad weight {tok:?}: {e}")))?,
                );
            }
            if data.len() - before != cols {
                return Err(parse_err(
                    ln,
                    format!("expected {cols} weights, found {}", data.len() - before),
                ));
            }
        }
        weights.push(Matrix { rows, cols, data });
    }
    if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(ln, format!("unexpected trailing data {extra:?}")));
    }
    Network::from_weights(&layer_sizes, slope, weights)
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<(), MlpError> {
    let path = path.as_ref();
    fs::write(path, checkpoint_string(net)).map_err(|source| MlpError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network, MlpError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MlpError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn phi(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    fn randomized(sizes: &[usize], seed: u64) -> Network {
        let mut net = Network::init(sizes, 1.0, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for w in net.weights_mut() {
            for v in w.as_mut_slice() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        net
    }

    fn xor_samples() -> Vec<Sample> {
        [(0.0, 0.0, 0), (0.0, 1.0, 1), (1.0, 0.0, 1), (1.0, 1.0, 0)]
            .iter()
            .map(|&(a, b, c)| Sample::one_hot(vec![a, b, 1.0], c, 2))
            .collect()
    }

    #[test]
    fn init_shapes_and_range() {
        let net = Network::init(&[4097, 90, 2], 1.0, 3).unwrap();
        let shapes: Vec<(usize, usize)> = net.weights().iter().map(|w| (w.rows(), w.cols())).collect();
        assert_eq!(shapes, vec![(90, 4097), (2, 91)]);
        let (lo, hi) = INIT_WEIGHT_RANGE;
        assert!(net
            .weights()
            .iter()
            .flat_map(|w| w.as_slice())
            .all(|&v| (lo..=hi).contains(&v)));
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::init(&[10, 4, 2], 1.0, 9).unwrap();
        assert_eq!(a, Network::init(&[10, 4, 2], 1.0, 9).unwrap());
        assert_ne!(a, Network::init(&[10, 4, 2], 1.0, 10).unwrap());
    }

    #[test]
    fn init_rejects_degenerate_sizes() {
        assert!(matches!(Network::init(&[3], 1.0, 0), Err(MlpError::InvalidLayers(_))));
        assert!(matches!(Network::init(&[3, 0, 2], 1.0, 0), Err(MlpError::InvalidLayers(_))));
    }

    #[test]
    fn zero_weights_give_half_everywhere() {
        let mut net = Network::init(&[5, 3, 2], 1.0, 0).unwrap();
        for w in net.weights_mut() {
            w.as_mut_slice().fill(0.0);
        }
        let acts = net.forward(&[0.3, -2.0, 7.0, 0.0, 1.0]).unwrap();
        assert!(acts.layers()[1..].iter().flatten().all(|&a| a == 0.5));
    }

    #[test]
    fn one_one_one_network_by_hand() {
        let w0 = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let w1 = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let net = Network::from_weights(&[1, 1, 1], 1.0, vec![w0, w1]).unwrap();
        let acts = net.forward(&[0.0]).unwrap();
        assert_eq!(acts.layers()[1], vec![0.5]);
        assert!((acts.output()[0] - 0.62246).abs() < 1e-5);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = Network::init(&[4, 2, 2], 1.0, 0).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(MlpError::LengthMismatch { expected: 4, actual: 2 })
        ));
    }

    #[test]
    fn from_weights_checks_shapes() {
        let w0 = Matrix::from_vec(2, 3, vec![0.0; 6]).unwrap();
        // The second layer needs a bias column: 2 x 3, not 2 x 2.
        let w1 = Matrix::from_vec(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(
            Network::from_weights(&[3, 2, 2], 1.0, vec![w0, w1]),
            Err(MlpError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_is_zero_when_output_matches() {
        let net = randomized(&[4, 3, 2], 5);
        let input = [0.1, 0.2, 0.3, 1.0];
        let acts = net.forward(&input).unwrap();
        let desired = acts.output().to_vec();
        assert_eq!(net.backward(&acts, &desired).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn backward_matches_chain_rule_by_hand() {
        let (x, a, b, c, d) = (0.5, 0.3, 0.7, 0.1, 1.0);
        let w0 = Matrix::from_vec(1, 1, vec![a]).unwrap();
        let w1 = Matrix::from_vec(1, 2, vec![b, c]).unwrap();
        let net = Network::from_weights(&[1, 1, 1], 1.0, vec![w0, w1]).unwrap();
        let grads = net.backward(&net.forward(&[x]).unwrap(), &[d]).unwrap();

        let h = phi(a * x);
        let o = phi(b * h + c);
        let out_signal = (o - d) * o * (1.0 - o);
        let expect_w1 = [out_signal * h, out_signal];
        let expect_w0 = out_signal * b * h * (1.0 - h) * x;
        let g1 = grads.layers()[1].as_slice();
        assert!((g1[0] - expect_w1[0]).abs() < 1e-15);
        assert!((g1[1] - expect_w1[1]).abs() < 1e-15);
        assert!((grads.layers()[0].get(0, 0) - expect_w0).abs() < 1e-15);
    }

    #[test]
    fn slope_scales_derivative() {
        let w0 = Matrix::from_vec(1, 1, vec![0.4]).unwrap();
        let w1 = Matrix::from_vec(1, 2, vec![0.9, -0.2]).unwrap();
        let net = Network::from_weights(&[1, 1, 1], 2.5, vec![w0, w1]).unwrap();
        let sample = Sample::one_hot(vec![0.8], 0, 1);
        assert!(gradient_check(&net, &sample, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn gradient_check_agrees_on_random_net() {
        let net = randomized(&[8, 5, 3], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sample = Sample::one_hot(input, 2, 3);
        let err = gradient_check(&net, &sample, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradient_check_flags_absurd_step() {
        let net = randomized(&[8, 5, 3], 11);
        let sample = Sample::one_hot(vec![0.5; 8], 0, 3);
        assert!(gradient_check(&net, &sample, 10.0).unwrap() > 1e-4);
    }

    #[test]
    fn update_rules() {
        let mut net = randomized(&[3, 2, 2], 2);
        let before = net.clone();
        let zero = WeightBuffers::zeros_like(&net);
        let mut deltas = WeightBuffers::zeros_like(&net);
        net.apply_update(&zero, &mut deltas, 0.5, 0.9).unwrap();
        assert_eq!(net, before);

        let mut grads = WeightBuffers::zeros_like(&net);
        grads.layers_mut()[0].set(1, 2, 2.0);
        net.apply_update(&grads, &mut deltas, 0.1, 0.0).unwrap();
        assert!((net.weights()[0].get(1, 2) - (before.weights()[0].get(1, 2) - 0.2)).abs() < 1e-15);

        // Second step with momentum: -0.1 * 2 + 0.5 * (-0.2).
        net.apply_update(&grads, &mut deltas, 0.1, 0.5).unwrap();
        assert!((deltas.layers()[0].get(1, 2) + 0.3).abs() < 1e-15);
        assert!((net.weights()[0].get(1, 2) - (before.weights()[0].get(1, 2) - 0.5)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn fused_step_matches_separate_passes(seed in any::<u64>(), class in 0usize..3, lr in 0.0..1.0f64, mom in 0.0..0.9f64) {
            let mut fused = randomized(&[6, 4, 3], seed);
            let mut split = fused.clone();
            let input: Vec<f64> = (0..6).map(|i| ((seed >> i) & 7) as f64 / 7.0).collect();
            let sample = Sample::one_hot(input, class, 3);
            let mut d_fused = WeightBuffers::zeros_like(&fused);
            let mut d_split = WeightBuffers::zeros_like(&split);
            for _ in 0..3 {
                let acts = fused.forward(&sample.input).unwrap();
                fused.train_step(&acts, &sample.desired, &mut d_fused, lr, mom).unwrap();
                let acts = split.forward(&sample.input).unwrap();
                let g = split.backward(&acts, &sample.desired).unwrap();
                split.apply_update(&g, &mut d_split, lr, mom).unwrap();
            }
            prop_assert_eq!(fused, split);
            prop_assert_eq!(d_fused, d_split);
        }

        #[test]
        fn outputs_stay_in_unit_interval(seed in any::<u64>(), scale in -50.0..50.0f64) {
            let net = randomized(&[4, 6, 3], seed);
            let out = net.predict(&[scale, -scale, 1.0, 0.5]).unwrap();
            prop_assert!(out.iter().all(|&o| (0.0..=1.0).contains(&o) && o.is_finite()));
        }
    }

    #[test]
    fn sample_mse_examples() {
        assert_eq!(sample_mse(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!((sample_mse(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!(sample_mse(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let mut net = Network::init(&[3, 4, 2], 1.0, 1).unwrap();
        let before = net.clone();
        let params = TrainParams {
            learning_rate: 0.0,
            momentum: 0.0,
            ..TrainParams::default()
        };
        let mut state = TrainState::new(&net, 1);
        let mse = train_epoch(&mut net, &xor_samples(), &params, &mut state).unwrap();
        assert_eq!(net, before);
        let expected: f64 = xor_samples()
            .iter()
            .map(|s| sample_mse(&before.predict(&s.input).unwrap(), &s.desired).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((mse - expected).abs() < 1e-15);
    }

    #[test]
    fn epochs_use_fresh_permutations() {
        let samples: Vec<Sample> = (0..8).map(|i| Sample::one_hot(vec![i as f64, 1.0], i % 2, 2)).collect();
        let mut net = Network::init(&[2, 3, 2], 1.0, 1).unwrap();
        let mut state = TrainState::new(&net, 42);
        let mut orders = Vec::new();
        for _ in 0..4 {
            train_epoch(&mut net, &samples, &TrainParams::default(), &mut state).unwrap();
            let mut sorted = state.last_order().to_vec();
            orders.push(sorted.clone());
            sorted.sort_unstable();
            assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        }
        assert!(orders.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn loose_target_converges_in_one_epoch() {
        let mut net = Network::init(&[3, 4, 2], 1.0, 1).unwrap();
        let params = TrainParams {
            mse_target: 10.0,
            ..TrainParams::default()
        };
        let report = train(&mut net, &xor_samples(), &params).unwrap();
        assert_eq!(report.outcome, Outcome::Converged);
        assert_eq!(report.epochs_run, 1);
    }

    #[test]
    fn epoch_limit_is_reported() {
        let mut net = Network::init(&[3, 4, 2], 1.0, 1).unwrap();
        let params = TrainParams {
            max_epochs: 3,
            ..TrainParams::default()
        };
        let report = train(&mut net, &xor_samples(), &params).unwrap();
        assert_eq!(report.outcome, Outcome::EpochLimit);
        assert_eq!(report.mse_history.len(), 3);
        assert_eq!(report.to_csv().lines().count(), 4);
        assert!(report.to_csv().starts_with("epoch,mse\n1,"));
    }

    #[test]
    fn xor_converges() {
        // With every initial weight in [0.01, 0.03] the hidden units start
        // nearly identical and most seeds stall in the classic XOR local
        // minimum near MSE 0.17; this seed breaks the symmetry.
        let mut net = Network::init(&[3, 4, 2], 1.0, 4).unwrap();
        let params = TrainParams {
            learning_rate: 0.5,
            mse_target: 0.01,
            ..TrainParams::default()
        };
        let report = train(&mut net, &xor_samples(), &params).unwrap();
        assert_eq!(report.outcome, Outcome::Converged, "{} epochs", report.epochs_run);
        assert!(report.epochs_run <= 20_000);
        for s in xor_samples() {
            let out = net.predict(&s.input).unwrap();
            let winner = if out[0] > out[1] { 0 } else { 1 };
            assert_eq!(Some(winner), s.class_index());
        }
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let mut net = Network::init(&[3, 4, 2], 1.0, 1).unwrap();
        let params = TrainParams {
            learning_rate: 1e3,
            ..TrainParams::default()
        };
        let report = train(&mut net, &xor_samples(), &params).unwrap();
        assert_eq!(report.outcome, Outcome::Diverged, "{:?}", &report.mse_history[..10]);
        assert!(report.epochs_run < 100);
    }

    #[test]
    fn divergence_rules() {
        let mut m = DivergenceMonitor::new(3, 10.0);
        assert!(!m.observe(0.2));
        assert!(!m.observe(0.01));
        assert!(!m.observe(0.1));
        assert!(!m.observe(0.2));
        // Dropping back below ten times the minimum resets the count.
        assert!(!m.observe(0.05));
        assert!(!m.observe(0.3));
        assert!(!m.observe(0.4));
        assert!(m.observe(0.5));

        let mut m = DivergenceMonitor::new(3, 10.0);
        for mse in [0.5, 0.5, 0.5] {
            assert!(!m.observe(mse));
        }
        assert!(m.observe(0.5));

        assert!(DivergenceMonitor::new(50, 10.0).observe(f64::NAN));
        assert!(DivergenceMonitor::new(50, 10.0).observe(f64::INFINITY));
    }

    #[test]
    fn steady_decrease_never_diverges() {
        let mut m = DivergenceMonitor::new(2, 10.0);
        assert!((1..1000).all(|i| !m.observe(1.0 / i as f64)));
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let net = randomized(&[7, 5, 3, 2], 8);
        let text = checkpoint_string(&net);
        assert!(text.starts_with("MINESCAN-MLP v1\n1e0 7 5 3 2\n"));
        assert_eq!(parse_checkpoint(&text).unwrap(), net);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.txt");
        save_model(&net, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), net);
    }

    #[test]
    fn checkpoint_errors() {
        let net = randomized(&[3, 2, 2], 1);
        let text = checkpoint_string(&net);
        let truncated: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_checkpoint(&truncated), Err(MlpError::Parse { line: 5, .. })));
        assert!(matches!(
            parse_checkpoint(&text.replace("MINESCAN-MLP v1", "MINESCAN-MLP v2")),
            Err(MlpError::Version(_))
        ));
        assert!(matches!(parse_checkpoint(""), Err(MlpError::Parse { .. })));
        assert!(matches!(
            parse_checkpoint(&format!("{text}0.5\n")),
            Err(MlpError::Parse { .. })
        ));
        assert!(matches!(
            load_model("/nonexistent/model.txt"),
            Err(MlpError::Io { .. })
        ));
    }
}
