//! Dense ReLU classifier with two output logits (real = 0, fake = 1).
//!
//! Parameters live in one flat [`ParamVector`]. For each consecutive pair of
//! widths `(w_in, w_out)` the block holds the `w_out x w_in` weight matrix in
//! row-major order followed by the `w_out` biases, so a layer occupies
//! `(w_in + 1) * w_out` slots.
//!
//! Batched passes go through `ndarray` matrix products; [`forward`] is the
//! single-sample entry point used by serving and tests.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Probabilities are clamped here before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    layer_widths: Vec<usize>,
    #[serde(default)]
    activation: Activation,
}

/// Location of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        (self.fan_in + 1) * self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.fan_out == 0
    }
}

impl ModelSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        let spec = ModelSpec {
            layer_widths,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default detector over flattened patches: `[input, 64, 32, 2]`.
    pub fn detector(input_width: usize) -> Self {
        ModelSpec {
            layer_widths: vec![input_width, 64, 32, 2],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::config("model needs at least an input and an output width"));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if *self.layer_widths.last().unwrap() != 2 {
            return Err(Error::config("binary detector must end in 2 logits"));
        }
        Ok(())
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += slot.len();
                slot
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Flat index of weight `(row, col)` of `layer` (row = output unit).
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let slot = self.layers()[layer];
        assert!(row < slot.fan_out && col < slot.fan_in);
        slot.weight_offset + row * slot.fan_in + col
    }

    pub fn bias_index(&self, layer: usize, row: usize) -> usize {
        let slot = self.layers()[layer];
        assert!(row < slot.fan_out);
        slot.bias_offset + row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite parameter", format!("index {i}")));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        ParamVector(vec![0.0; spec.param_count()])
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn he_uniform(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; spec.param_count()];
        for slot in spec.layers() {
            let bound = (6.0 / slot.fan_in as f64).sqrt();
            for v in &mut values[slot.weight_offset..slot.bias_offset] {
                *v = rng.random_range(-bound..bound);
            }
        }
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn check_congruent(&self, spec: &ModelSpec) -> Result<()> {
        if self.0.len() != spec.param_count() {
            return Err(Error::config(format!(
                "parameter vector has {} entries, model {:?} needs {}",
                self.0.len(),
                spec.layer_widths(),
                spec.param_count()
            )));
        }
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of every value.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.0 {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn weights(&self, slot: &LayerSlot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (slot.fan_out, slot.fan_in),
            &self.0[slot.weight_offset..slot.bias_offset],
        )
        .expect("slot shape matches layout")
    }

    fn biases(&self, slot: &LayerSlot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.0[slot.bias_offset..slot.bias_offset + slot.fan_out])
    }
}

/// Pre-softmax scores for (real, fake).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logits(pub [f64; 2]);

impl Logits {
    /// Argmax with ties resolved to class 0.
    pub fn predicted_class(&self) -> u8 {
        u8::from(self.0[1] > self.0[0])
    }
}

pub fn forward(spec: &ModelSpec, params: &ParamVector, input: &[f64]) -> Result<Logits> {
    if input.len() != spec.input_width() {
        return Err(Error::config(format!(
            "input has {} features, model expects {}",
            input.len(),
            spec.input_width()
        )));
    }
    let inputs = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    let out = forward_batch(spec, params, inputs)?;
    Ok(Logits([out[[0, 0]], out[[0, 1]]]))
}

/// Logits for every row of `inputs`, one row per sample.
pub fn forward_batch(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    params.check_congruent(spec)?;
    if inputs.ncols() != spec.input_width() {
        return Err(Error::config(format!(
            "input has {} features, model expects {}",
            inputs.ncols(),
            spec.input_width()
        )));
    }
    let layers = spec.layers();
    let mut act = inputs.to_owned();
    for (k, slot) in layers.iter().enumerate() {
        let mut z = act.dot(&params.weights(slot).t());
        z += &params.biases(slot);
        if let Some(r) = first_non_finite_row(&z) {
            return Err(Error::numeric(
                format!("non-finite activation in layer {k}"),
                format!("sample {r}"),
            ));
        }
        if k + 1 < layers.len() {
            z.mapv_inplace(relu);
        }
        act = z;
    }
    Ok(act)
}

fn first_non_finite_row(z: &Array2<f64>) -> Option<usize> {
    z.rows()
        .into_iter()
        .position(|row| row.iter().any(|v| !v.is_finite()))
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `softmax(logits / tau)` with max-subtraction.
pub fn softmax_temp(logits: &Logits, tau: f64) -> Result<[f64; 2]> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    Ok(softmax_unchecked(logits, tau))
}

pub(crate) fn softmax_unchecked(logits: &Logits, tau: f64) -> [f64; 2] {
    let a = logits.0[0] / tau;
    let b = logits.0[1] / tau;
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let sum = ea + eb;
    [ea / sum, eb / sum]
}

/// `-ln(probs[label])` with the probability clamped at [`LOG_CLAMP`].
pub fn cross_entropy(probs: &[f64; 2], label: u8) -> f64 {
    -probs[label as usize].max(LOG_CLAMP).ln()
}

/// Per-sample loss evaluated on logits.
///
/// `eval(row, logits)` returns the loss of sample `row` and its derivative with
/// respect to both logits.
pub trait LogitLoss {
    fn eval(&self, row: usize, logits: &Logits) -> (f64, [f64; 2]);
}

impl<F> LogitLoss for F
where
    F: Fn(usize, &Logits) -> (f64, [f64; 2]),
{
    fn eval(&self, row: usize, logits: &Logits) -> (f64, [f64; 2]) {
        self(row, logits)
    }
}

/// Temperature-1 cross-entropy against integer labels.
pub struct LabelLoss<'a> {
    pub labels: &'a [u8],
}

impl LogitLoss for LabelLoss<'_> {
    fn eval(&self, row: usize, logits: &Logits) -> (f64, [f64; 2]) {
        label_loss(logits, self.labels[row])
    }
}

/// Temperature-1 cross-entropy of one sample and its logit gradient `p - onehot(y)`.
pub(crate) fn label_loss(logits: &Logits, label: u8) -> (f64, [f64; 2]) {
    let p = softmax_unchecked(logits, 1.0);
    let mut grad = p;
    grad[label as usize] -= 1.0;
    (cross_entropy(&p, label), grad)
}

/// Activations and per-sample output deltas of one batched pass.
struct Tape {
    /// `acts[k]` is the input to layer `k` (batch x fan_in).
    acts: Vec<Array2<f64>>,
    /// `deltas[k]` is dLoss_row/dZ_k for every row, unscaled by batch size.
    deltas: Vec<Array2<f64>>,
    losses: Vec<f64>,
}

fn run_tape(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    loss: &dyn LogitLoss,
) -> Result<Tape> {
    params.check_congruent(spec)?;
    if inputs.nrows() == 0 {
        return Err(Error::config("empty batch"));
    }
    if inputs.ncols() != spec.input_width() {
        return Err(Error::config(format!(
            "input has {} features, model expects {}",
            inputs.ncols(),
            spec.input_width()
        )));
    }
    let layers = spec.layers();
    let n = layers.len();
    let mut acts = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    acts.push(inputs.to_owned());
    for (k, slot) in layers.iter().enumerate() {
        let mut z = acts[k].dot(&params.weights(slot).t());
        z += &params.biases(slot);
        if let Some(r) = first_non_finite_row(&z) {
            return Err(Error::numeric(
                format!("non-finite activation in layer {k}"),
                format!("sample {r}"),
            ));
        }
        if k + 1 < n {
            acts.push(z.mapv(relu));
        }
        pre.push(z);
    }

    let out = &pre[n - 1];
    let rows = out.nrows();
    let mut losses = Vec::with_capacity(rows);
    let mut delta = Array2::<f64>::zeros((rows, 2));
    for r in 0..rows {
        let logits = Logits([out[[r, 0]], out[[r, 1]]]);
        if !logits.0.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite logits", format!("sample {r}")));
        }
        let (l, g) = loss.eval(r, &logits);
        if !l.is_finite() || !g.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite loss", format!("sample {r}")));
        }
        losses.push(l);
        delta[[r, 0]] = g[0];
        delta[[r, 1]] = g[1];
    }

    let mut deltas = vec![Array2::zeros((0, 0)); n];
    for k in (0..n).rev() {
        if k + 1 < n {
            let mut d = deltas[k + 1].dot(&params.weights(&layers[k + 1]));
            d.zip_mut_with(&pre[k], |dv, &zv| {
                if zv <= 0.0 {
                    *dv = 0.0;
                }
            });
            deltas[k] = d;
        } else {
            deltas[k] = std::mem::take(&mut delta);
        }
    }
    Ok(Tape {
        acts,
        deltas,
        losses,
    })
}

/// Mean batch loss and its exact gradient with respect to every parameter.
pub fn backward(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    loss: &dyn LogitLoss,
) -> Result<(f64, Vec<f64>)> {
    let tape = run_tape(spec, params, inputs, loss)?;
    let rows = tape.losses.len() as f64;
    let mut grad = vec![0.0; spec.param_count()];
    for (k, slot) in spec.layers().iter().enumerate() {
        let gw = tape.deltas[k].t().dot(&tape.acts[k]);
        let gb = tape.deltas[k].sum_axis(Axis(0));
        write_block(&mut grad, slot, &gw, &gb, 1.0 / rows);
    }
    let mean = tape.losses.iter().sum::<f64>() / rows;
    Ok((mean, grad))
}

/// Sum over rows of the squared per-sample gradient, one entry per parameter.
pub fn squared_gradient_sum(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    loss: &dyn LogitLoss,
) -> Result<Vec<f64>> {
    let tape = run_tape(spec, params, inputs, loss)?;
    let mut out = vec![0.0; spec.param_count()];
    for (k, slot) in spec.layers().iter().enumerate() {
        let d2 = tape.deltas[k].mapv(|v| v * v);
        let a2 = tape.acts[k].mapv(|v| v * v);
        let gw = d2.t().dot(&a2);
        let gb = d2.sum_axis(Axis(0));
        write_block(&mut out, slot, &gw, &gb, 1.0);
    }
    Ok(out)
}

fn write_block(dst: &mut [f64], slot: &LayerSlot, w: &Array2<f64>, b: &Array1<f64>, scale: f64) {
    let wdst = &mut dst[slot.weight_offset..slot.bias_offset];
    for (d, s) in wdst.iter_mut().zip(w.iter()) {
        *d = s * scale;
    }
    let bdst = &mut dst[slot.bias_offset..slot.bias_offset + slot.fan_out];
    for (d, s) in bdst.iter_mut().zip(b.iter()) {
        *d = s * scale;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate_initial: f64,
    pub learning_rate_min: f64,
    pub momentum: f64,
    pub velocity: Vec<f64>,
    pub epoch_budget: usize,
}

impl OptimizerState {
    pub fn new(
        param_count: usize,
        learning_rate_initial: f64,
        learning_rate_min: f64,
        momentum: f64,
        epoch_budget: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(learning_rate_min <= learning_rate_initial) || learning_rate_min < 0.0 {
            return Err(Error::config("need 0 <= lr_min <= lr_initial"));
        }
        if epoch_budget == 0 {
            return Err(Error::config("epoch budget must be positive"));
        }
        Ok(OptimizerState {
            learning_rate_initial,
            learning_rate_min,
            momentum,
            velocity: vec![0.0; param_count],
            epoch_budget,
        })
    }
}

/// Classic momentum: `v <- momentum * v + g`, then `theta <- theta - lr * v`.
pub fn sgd_step(
    params: &mut ParamVector,
    gradient: &[f64],
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if gradient.len() != params.len() || opt.velocity.len() != params.len() {
        return Err(Error::config("gradient, velocity and parameters differ in length"));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric("non-finite gradient", format!("index {i}")));
    }
    let m = opt.momentum;
    for ((theta, v), g) in params.0.iter_mut().zip(opt.velocity.iter_mut()).zip(gradient) {
        *v = m * *v + g;
        *theta -= lr * *v;
    }
    Ok(())
}

/// Cosine annealing from `lr_initial` at epoch 0 to `lr_min` at the budget.
pub fn cosine_lr(epoch: usize, opt: &OptimizerState) -> Result<f64> {
    if epoch > opt.epoch_budget {
        return Err(Error::Domain(format!(
            "epoch {epoch} past budget {}",
            opt.epoch_budget
        )));
    }
    let frac = epoch as f64 / opt.epoch_budget as f64;
    let (hi, lo) = (opt.learning_rate_initial, opt.learning_rate_min);
    Ok(lo + 0.5 * (hi - lo) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Copies the rows `idx` of `inputs` into a fresh matrix.
pub(crate) fn gather_rows(inputs: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), inputs.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.slice_mut(s![r, ..]).assign(&inputs.row(i));
    }
    out
}
