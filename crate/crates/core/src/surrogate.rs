//! Residual feedforward surrogate mapping Hamiltonian parameters to
//! flattened ansatz parameters.
//!
//! All weights live in one flat `Vec<f64>` in this order:
//!
//! 1. input projection weight, `width x input_dim`, row-major, then its bias
//! 2. each hidden block in depth order: weight `width x width` row-major,
//!    then bias
//! 3. output projection weight, `output_dim x width`, row-major, then bias
//!
//! A hidden block computes `act(W h + b) + h` (or `act(W h + b)` without
//! residual connections). The projections are linear.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cqe::{AnsatzLayer, AnsatzLayout};
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::hamiltonian::{FamilyMetadata, HamiltonianFamily};

/// Components whose training spread is below this are only centred, never
/// scaled up.
pub const STD_FLOOR: f64 = 1e-6;
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub residual: bool,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpConfig {
    /// Six residual ReLU blocks of width 256.
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_width: 256,
            hidden_layers: 6,
            residual: true,
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidArgument("network dimensions must be at least 1".into()));
        }
        Ok(())
    }

    fn offsets(&self) -> Offsets {
        let (i, w, o) = (self.input_dim, self.hidden_width, self.output_dim);
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let input = (take(w * i), take(w));
        let blocks = (0..self.hidden_layers).map(|_| (take(w * w), take(w))).collect();
        let output = (take(o * w), take(o));
        Offsets {
            input,
            blocks,
            output,
            len: at,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.offsets().len
    }
}

/// Start of each weight and bias in the flat vector.
#[derive(Debug, Clone)]
struct Offsets {
    input: (usize, usize),
    blocks: Vec<(usize, usize)>,
    output: (usize, usize),
    len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub config: MlpConfig,
    pub values: Vec<f64>,
}

fn matrix(data: &[f64], at: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &data[at..at + rows * cols]).expect("offsets match config")
}

fn matrix_mut(data: &mut [f64], at: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut data[at..at + rows * cols]).expect("offsets match config")
}

fn vector(data: &[f64], at: usize, len: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&data[at..at + len])
}

fn vector_mut(data: &mut [f64], at: usize, len: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut data[at..at + len])
}

/// `x W^T + b` for a batch `x` laid out one sample per row.
fn affine(x: &ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), w.nrows()));
    out.assign(&b.broadcast((x.nrows(), w.nrows())).expect("bias matches width"));
    general_mat_mul(1.0, x, &w.t(), 1.0, &mut out);
    out
}

/// Intermediate values kept for the backward pass.
struct Tape {
    /// Hidden states `h_0 .. h_L`.
    hidden: Vec<Array2<f64>>,
    /// Pre-activations of the blocks.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

/// Initial weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init(config: &MlpConfig) -> Result<MlpParams> {
    config.validate()?;
    let off = config.offsets();
    let mut values = vec![0.0; off.len];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fill = |at: usize, rows: usize, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for v in &mut values[at..at + rows * fan_in] {
            *v = dist.sample(&mut rng);
        }
    };
    let (i, w, o) = (config.input_dim, config.hidden_width, config.output_dim);
    fill(off.input.0, w, i);
    for &(wt, _) in &off.blocks {
        fill(wt, w, w);
    }
    fill(off.output.0, o, w);
    Ok(MlpParams {
        config: config.clone(),
        values,
    })
}

impl MlpParams {
    pub fn from_values(config: MlpConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: config.parameter_count(),
                found: values.len(),
            });
        }
        Ok(Self { config, values })
    }

    fn check_batch(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn run(&self, x: &ArrayView2<f64>) -> Tape {
        let c = &self.config;
        let off = c.offsets();
        let d = &self.values;
        let (i, w, o) = (c.input_dim, c.hidden_width, c.output_dim);
        let mut hidden = Vec::with_capacity(c.hidden_layers + 1);
        let mut pre = Vec::with_capacity(c.hidden_layers);
        hidden.push(affine(x, matrix(d, off.input.0, w, i), vector(d, off.input.1, w)));
        for &(wt, b) in &off.blocks {
            let h = hidden.last().expect("input projection pushed");
            let z = affine(&h.view(), matrix(d, wt, w, w), vector(d, b, w));
            let mut next = z.mapv(|v| c.activation.apply(v));
            if c.residual {
                next += h;
            }
            pre.push(z);
            hidden.push(next);
        }
        let last = hidden.last().expect("input projection pushed");
        let output = affine(&last.view(), matrix(d, off.output.0, o, w), vector(d, off.output.1, o));
        Tape { hidden, pre, output }
    }

    /// Outputs for a batch, one sample per row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&x)?;
        Ok(self.run(&x).output)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("one row");
        Ok(self.forward_batch(batch)?.row(0).to_vec())
    }

    /// Mean squared error over batch and components, and its gradient with
    /// respect to every parameter in flat order.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        self.check_batch(&x)?;
        let c = &self.config;
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if y.nrows() != x.nrows() || y.ncols() != c.output_dim {
            return Err(Error::DimensionMismatch {
                expected: c.output_dim,
                found: y.ncols(),
            });
        }
        let tape = self.run(&x);
        let diff = &tape.output - &y;
        let n = (diff.len()) as f64;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::NonFiniteObjective { index: 0 });
        }

        let off = c.offsets();
        let d = &self.values;
        let (i, w, o) = (c.input_dim, c.hidden_width, c.output_dim);
        let mut grad = vec![0.0; off.len];

        let d_out = diff * (2.0 / n);
        let top = tape.hidden.last().expect("hidden states recorded");
        general_mat_mul(
            1.0,
            &d_out.t(),
            top,
            0.0,
            &mut matrix_mut(&mut grad, off.output.0, o, w),
        );
        vector_mut(&mut grad, off.output.1, o).assign(&d_out.sum_axis(Axis(0)));
        let mut d_h = d_out.dot(&matrix(d, off.output.0, o, w));

        for (layer, &(wt, b)) in off.blocks.iter().enumerate().rev() {
            let z = &tape.pre[layer];
            let mut d_z = d_h.clone();
            d_z.zip_mut_with(z, |g, &zv| *g *= c.activation.derivative(zv));
            let h_in = &tape.hidden[layer];
            general_mat_mul(1.0, &d_z.t(), h_in, 0.0, &mut matrix_mut(&mut grad, wt, w, w));
            vector_mut(&mut grad, b, w).assign(&d_z.sum_axis(Axis(0)));
            let through = d_z.dot(&matrix(d, wt, w, w));
            d_h = if c.residual { through + &d_h } else { through };
        }

        general_mat_mul(1.0, &d_h.t(), &x, 0.0, &mut matrix_mut(&mut grad, off.input.0, w, i));
        vector_mut(&mut grad, off.input.1, w).assign(&d_h.sum_axis(Axis(0)));
        Ok((loss, grad))
    }

    /// FNV-1a over the little-endian bytes of every parameter.
    pub fn checksum(&self) -> u64 {
        checksum(&self.values)
    }
}

pub fn checksum(values: &[f64]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    hash
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub standardize_inputs: bool,
    pub standardize_outputs: bool,
    /// Stop after this many epochs without a new best validation loss.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 256,
            epochs: 1000,
            seed: 0,
            standardize_inputs: true,
            standardize_outputs: true,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidArgument("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            found: grads.len(),
        });
    }
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= config.learning_rate * (*m / c1) / ((*v / c2).sqrt() + config.adam_epsilon);
    }
    Ok(())
}

/// Per-component affine map to zero mean and unit spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics of `rows`; spreads below [`STD_FLOOR`] become 1.
    pub fn fit(rows: &[Vec<f64>], dim: usize) -> Self {
        if rows.is_empty() {
            return Self::identity(dim);
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < STD_FLOOR {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

/// Inputs and targets, one sample per entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Samples {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Unflagged records as `physical_params -> flat_ansatz`.
    pub fn from_records(records: &[dataset::SampleRecord]) -> Self {
        let kept = records.iter().filter(|r| !r.is_flagged());
        let (inputs, targets) = kept.map(|r| (r.physical_params.clone(), r.flat_ansatz.clone())).unzip();
        Self { inputs, targets }
    }
}

fn stack(rows: &[Vec<f64>], map: impl Fn(&[f64]) -> Vec<f64>, dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, row) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&Array1::from(map(row)));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss of each epoch, in standardized units.
    pub train_loss: Vec<f64>,
    /// Validation loss in standardized units.
    pub val_loss: Vec<f64>,
    /// Validation mean squared error of the raw ansatz parameters.
    pub val_param_mse: Vec<f64>,
    /// Optional per-epoch monitor value, such as a held-out energy error.
    pub monitor: Vec<Option<f64>>,
    pub best_epoch: usize,
    /// Set when a non-finite loss or parameter stopped training.
    pub diverged_at: Option<usize>,
    pub wall_clock_seconds: f64,
    pub checksum: u64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

/// Equality of everything except the wall clock.
impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let opt_bits = |v: &[Option<f64>]| v.iter().map(|x| x.map(f64::to_bits)).collect::<Vec<_>>();
        bits(&self.train_loss) == bits(&other.train_loss)
            && bits(&self.val_loss) == bits(&other.val_loss)
            && bits(&self.val_param_mse) == bits(&other.val_param_mse)
            && opt_bits(&self.monitor) == opt_bits(&other.monitor)
            && self.best_epoch == other.best_epoch
            && self.diverged_at == other.diverged_at
            && self.checksum == other.checksum
    }
}

/// A trained network with everything needed to turn physical parameters
/// into ansatz layers.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub params: MlpParams,
    pub input_stats: Standardizer,
    pub output_stats: Standardizer,
    pub family: FamilyMetadata,
    pub layout: AnsatzLayout,
    pub train_config: TrainConfig,
    /// The effective run configuration, when produced by the CLI.
    pub run_config: Option<serde_json::Value>,
}

impl SurrogateModel {
    /// Raw (de-standardized) network output.
    pub fn predict_flat(&self, physical_params: &[f64]) -> Result<Vec<f64>> {
        let out = self.params.forward(&self.input_stats.apply(physical_params))?;
        Ok(self.output_stats.invert(&out))
    }

    pub fn predict_flat_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let c = &self.params.config;
        let x = stack(inputs, |r| self.input_stats.apply(r), c.input_dim);
        let y = self.params.forward_batch(x.view())?;
        Ok(y.rows()
            .into_iter()
            .map(|r| self.output_stats.invert(r.as_slice().expect("row-major")))
            .collect())
    }
}

/// Predicted ansatz layers for `family` at `physical_params`.
pub fn predict_ansatz(
    model: &SurrogateModel,
    family: &HamiltonianFamily,
    physical_params: &[f64],
) -> Result<Vec<AnsatzLayer>> {
    if family.metadata() != model.family {
        return Err(Error::LayoutMismatch(format!(
            "model was trained for {}, not {}",
            model.family.name,
            family.name()
        )));
    }
    if physical_params.len() != model.params.config.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.params.config.input_dim,
            found: physical_params.len(),
        });
    }
    model.layout.unflatten(&model.predict_flat(physical_params)?)
}

/// Validation losses in standardized and raw units.
fn validation_losses(model: &SurrogateModel, val: &Samples, x: &Array2<f64>, y: &Array2<f64>) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let pred = model.params.forward_batch(x.view())?;
    let n = pred.len() as f64;
    let std_loss = (&pred - y).iter().map(|v| v * v).sum::<f64>() / n;
    let mut raw = 0.0;
    for (row, target) in pred.rows().into_iter().zip(&val.targets) {
        let back = model.output_stats.invert(row.as_slice().expect("row-major"));
        raw += back.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok((std_loss, raw / n))
}

/// Trains with shuffled mini-batches and keeps the parameters of the best
/// validation epoch. `monitor` is called with the current model after every
/// epoch and its value stored in the report.
pub fn train_with_monitor(
    train: &Samples,
    val: &Samples,
    family: FamilyMetadata,
    layout: AnsatzLayout,
    mlp: &MlpConfig,
    config: &TrainConfig,
    monitor: &mut dyn FnMut(usize, &SurrogateModel) -> Option<f64>,
) -> Result<(SurrogateModel, TrainReport)> {
    config.validate()?;
    mlp.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if layout.flat_len() != mlp.output_dim || family.physical_param_dim != mlp.input_dim {
        return Err(Error::LayoutMismatch(format!(
            "network {}->{} does not match dataset {}->{}",
            mlp.input_dim,
            mlp.output_dim,
            family.physical_param_dim,
            layout.flat_len()
        )));
    }
    for (x, y) in train
        .inputs
        .iter()
        .zip(&train.targets)
        .chain(val.inputs.iter().zip(&val.targets))
    {
        if x.len() != mlp.input_dim || y.len() != mlp.output_dim {
            return Err(Error::DimensionMismatch {
                expected: mlp.output_dim,
                found: y.len(),
            });
        }
    }
    let started = Instant::now();
    let input_stats = if config.standardize_inputs {
        Standardizer::fit(&train.inputs, mlp.input_dim)
    } else {
        Standardizer::identity(mlp.input_dim)
    };
    let output_stats = if config.standardize_outputs {
        Standardizer::fit(&train.targets, mlp.output_dim)
    } else {
        Standardizer::identity(mlp.output_dim)
    };
    let train_x = stack(&train.inputs, |r| input_stats.apply(r), mlp.input_dim);
    let train_y = stack(&train.targets, |r| output_stats.apply(r), mlp.output_dim);
    let val_x = stack(&val.inputs, |r| input_stats.apply(r), mlp.input_dim);
    let val_y = stack(&val.targets, |r| output_stats.apply(r), mlp.output_dim);

    let mut model = SurrogateModel {
        params: init(mlp)?,
        input_stats,
        output_stats,
        family,
        layout,
        train_config: config.clone(),
        run_config: None,
    };
    let mut adam = AdamState::new(model.params.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_param_mse: Vec::new(),
        monitor: Vec::new(),
        best_epoch: 0,
        diverged_at: None,
        wall_clock_seconds: 0.0,
        checksum: 0,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let bx = train_x.select(Axis(0), chunk);
            let by = train_y.select(Axis(0), chunk);
            let (loss, grad) = match model.params.loss_and_gradient(bx.view(), by.view()) {
                Ok(v) => v,
                Err(Error::NonFiniteObjective { .. }) => {
                    report.diverged_at = Some(epoch);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            adam_step(&mut model.params.values, &grad, &mut adam, config)?;
            if !model.params.values.iter().all(|v| v.is_finite()) {
                report.diverged_at = Some(epoch);
                break 'epochs;
            }
            total += loss * chunk.len() as f64;
        }
        let (val_loss, val_mse) = validation_losses(&model, val, &val_x, &val_y)?;
        report.train_loss.push(total / train.len() as f64);
        report.val_loss.push(val_loss);
        report.val_param_mse.push(val_mse);
        report.monitor.push(monitor(epoch, &model));

        // without validation data the training loss picks the checkpoint
        let score = if val.is_empty() {
            total / train.len() as f64
        } else {
            val_loss
        };
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, model.params.values.clone()));
            report.best_epoch = epoch;
        }
        if let Some(patience) = config.patience {
            if epoch - report.best_epoch >= patience {
                break;
            }
        }
    }

    if let Some((_, values)) = best {
        model.params.values = values;
    }
    report.checksum = model.params.checksum();
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok((model, report))
}

pub fn train(
    train: &Samples,
    val: &Samples,
    family: FamilyMetadata,
    layout: AnsatzLayout,
    mlp: &MlpConfig,
    config: &TrainConfig,
) -> Result<(SurrogateModel, TrainReport)> {
    train_with_monitor(train, val, family, layout, mlp, config, &mut |_, _| None)
}

/// Drops flagged rows, splits with the manifest's fraction and seed, and
/// trains.
pub fn train_on_dataset(
    data: &Dataset,
    mlp: &MlpConfig,
    config: &TrainConfig,
) -> Result<(SurrogateModel, TrainReport)> {
    let (tr, va) = dataset::split(&data.records, data.manifest.train_fraction, data.manifest.split_seed)?;
    train(
        &Samples::from_records(&tr),
        &Samples::from_records(&va),
        data.manifest.family.clone(),
        data.manifest.layout,
        mlp,
        config,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    format_version: u32,
    mlp: MlpConfig,
    parameter_count: usize,
    /// File name of the weight blob, next to the manifest.
    weights: String,
    checksum: u64,
    input_stats: Standardizer,
    output_stats: Standardizer,
    family: FamilyMetadata,
    layout: AnsatzLayout,
    train_config: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run_config: Option<serde_json::Value>,
}

/// Blob path for a manifest path: same stem, `.bin` extension.
pub fn weights_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (JSON manifest) and its `.bin` weight blob.
pub fn save_model(model: &SurrogateModel, path: &Path) -> Result<()> {
    let blob = weights_path(path);
    let manifest = ModelManifest {
        format: "kcqe-surrogate".into(),
        format_version: MODEL_FORMAT_VERSION,
        mlp: model.params.config.clone(),
        parameter_count: model.params.values.len(),
        weights: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        checksum: model.params.checksum(),
        input_stats: model.input_stats.clone(),
        output_stats: model.output_stats.clone(),
        family: model.family.clone(),
        layout: model.layout,
        train_config: model.train_config.clone(),
        run_config: model.run_config.clone(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", dataset::to_json_line(&manifest)?)?;
    out.flush()?;
    let mut bin = BufWriter::new(File::create(&blob)?);
    for v in &model.params.values {
        bin.write_all(&v.to_le_bytes())?;
    }
    bin.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SurrogateModel> {
    let text = std::fs::read_to_string(path)?;
    let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_FORMAT_VERSION,
            found: manifest.format_version,
        });
    }
    let blob = path.with_file_name(&manifest.weights);
    let mut bytes = Vec::new();
    BufReader::new(File::open(&blob)?).read_to_end(&mut bytes)?;
    if bytes.len() != manifest.parameter_count * 8 {
        return Err(Error::Malformed {
            path: blob,
            line: 0,
            message: format!(
                "expected {} weights, found {} bytes",
                manifest.parameter_count,
                bytes.len()
            ),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if checksum(&values) != manifest.checksum {
        return Err(Error::Malformed {
            path: blob,
            line: 0,
            message: "weight checksum mismatch".into(),
        });
    }
    Ok(SurrogateModel {
        params: MlpParams::from_values(manifest.mlp, values)?,
        input_stats: manifest.input_stats,
        output_stats: manifest.output_stats,
        family: manifest.family,
        layout: manifest.layout,
        train_config: manifest.train_config,
        run_config: manifest.run_config,
    })
}
