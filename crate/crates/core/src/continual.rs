//! Knowledge distillation and elastic weight consolidation over task streams.
//!
//! Every task after the first is trained on its own data only. Under
//! [`Strategy::Kd`] the previous model is frozen as a teacher whose softened
//! outputs regularize the student; under [`Strategy::Ewc`] each finished task
//! leaves a [`TaskAnchor`] (parameters plus diagonal Fisher) and later training
//! pays a quadratic price for moving important parameters away from it.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::harness::{accuracy, EvalMatrix, RunConfig};
use crate::nn::{
    backward, cosine_lr, forward_batch, gather_rows, label_loss, sgd_step,
    softmax_temp, softmax_unchecked, squared_gradient_sum, LabelLoss, Logits, ModelSpec,
    OptimizerState, ParamVector, LOG_CLAMP,
};
use crate::taskgen::{mix_seed, Patch, Sample, TaskDataset, PATCH_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    /// Multiply the distillation gradient by tau^2. Off by default.
    #[serde(default)]
    pub scale_by_tau_sq: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            alpha: 1.0,
            beta: 1.0,
            tau: 2.0,
            scale_by_tau_sq: false,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::config("KD coefficients must be non-negative"));
        }
        if !(self.alpha + self.beta > 0.0) {
            return Err(Error::config("KD needs alpha + beta > 0"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config("KD temperature must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Accumulation {
    /// One quadratic term per finished task.
    #[default]
    PerTaskList,
    /// All terms merged into a single quadratic.
    RunningSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwcConfig {
    pub lambda: f64,
    pub fisher_sample_count: usize,
    #[serde(default)]
    pub accumulation: Accumulation,
}

impl Default for EwcConfig {
    fn default() -> Self {
        EwcConfig {
            lambda: 1000.0,
            fisher_sample_count: 256,
            accumulation: Accumulation::PerTaskList,
        }
    }
}

impl EwcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("EWC lambda must be finite and >= 0"));
        }
        if self.fisher_sample_count == 0 {
            return Err(Error::config("fisher_sample_count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Transfer,
    Kd(KdConfig),
    Ewc(EwcConfig),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Transfer => "transfer",
            Strategy::Kd(_) => "kd",
            Strategy::Ewc(_) => "ewc",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Transfer => Ok(()),
            Strategy::Kd(c) => c.validate(),
            Strategy::Ewc(c) => c.validate(),
        }
    }
}

/// Parameters and diagonal Fisher recorded at the end of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAnchor {
    pub anchor_params: ParamVector,
    pub fisher_diag: Vec<f64>,
    pub task_name: String,
}

impl TaskAnchor {
    pub fn new(anchor_params: ParamVector, fisher_diag: Vec<f64>, task_name: impl Into<String>) -> Result<Self> {
        if anchor_params.len() != fisher_diag.len() {
            return Err(Error::config("anchor parameters and Fisher diagonal differ in length"));
        }
        if fisher_diag.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::config("Fisher entries must be finite and non-negative"));
        }
        Ok(TaskAnchor {
            anchor_params,
            fisher_diag,
            task_name: task_name.into(),
        })
    }

    /// Single quadratic equivalent (up to a constant) to the sum of `anchors`:
    /// Fisher entries add, anchor points average weighted by Fisher.
    pub fn merge(anchors: &[TaskAnchor]) -> Result<TaskAnchor> {
        let last = anchors
            .last()
            .ok_or_else(|| Error::config("cannot merge an empty anchor list"))?;
        let n = last.fisher_diag.len();
        let mut fisher = vec![0.0; n];
        let mut weighted = vec![0.0; n];
        for a in anchors {
            if a.fisher_diag.len() != n {
                return Err(Error::config("anchors differ in length"));
            }
            for i in 0..n {
                fisher[i] += a.fisher_diag[i];
                weighted[i] += a.fisher_diag[i] * a.anchor_params.as_slice()[i];
            }
        }
        let center = (0..n)
            .map(|i| {
                if fisher[i] > 0.0 {
                    weighted[i] / fisher[i]
                } else {
                    last.anchor_params.as_slice()[i]
                }
            })
            .collect();
        let names: Vec<&str> = anchors.iter().map(|a| a.task_name.as_str()).collect();
        TaskAnchor::new(ParamVector::from_vec(center)?, fisher, names.join("+"))
    }
}

/// Anchors accumulated over a stream according to an [`Accumulation`] mode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorStore {
    pub mode: Accumulation,
    pub anchors: Vec<TaskAnchor>,
}

impl AnchorStore {
    pub fn new(mode: Accumulation) -> Self {
        AnchorStore {
            mode,
            anchors: Vec::new(),
        }
    }

    pub fn push(&mut self, anchor: TaskAnchor) -> Result<()> {
        match self.mode {
            Accumulation::PerTaskList => self.anchors.push(anchor),
            Accumulation::RunningSum => {
                let mut all = std::mem::take(&mut self.anchors);
                all.push(anchor);
                self.anchors = vec![TaskAnchor::merge(&all)?];
            }
        }
        Ok(())
    }
}

/// Cross-entropy between the softened teacher and student distributions,
/// `-sum_c softmax(t/tau)_c * ln softmax(s/tau)_c`.
pub fn distill_term(teacher: &Logits, student: &Logits, tau: f64) -> Result<f64> {
    let pt = softmax_temp(teacher, tau)?;
    let ps = softmax_temp(student, tau)?;
    Ok(soft_cross_entropy(&pt, &ps))
}

fn soft_cross_entropy(target: &[f64; 2], pred: &[f64; 2]) -> f64 {
    -(target[0] * pred[0].max(LOG_CLAMP).ln() + target[1] * pred[1].max(LOG_CLAMP).ln())
}

/// `alpha * distill_term + beta * cross_entropy(softmax(student), label)`.
pub fn kd_loss(teacher: &Logits, student: &Logits, label: u8, cfg: &KdConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(kd_loss_grad(teacher, student, label, cfg).0)
}

/// [`kd_loss`] and its gradient with respect to the student logits. `cfg` is
/// assumed valid.
pub fn kd_loss_grad(teacher: &Logits, student: &Logits, label: u8, cfg: &KdConfig) -> (f64, [f64; 2]) {
    let tau = cfg.tau;
    let pt = softmax_unchecked(teacher, tau);
    let ps = softmax_unchecked(student, tau);
    let ld = soft_cross_entropy(&pt, &ps);
    let gscale = if cfg.scale_by_tau_sq { tau } else { 1.0 / tau };
    let gd = [(ps[0] - pt[0]) * gscale, (ps[1] - pt[1]) * gscale];
    let (ls, gs) = label_loss(student, label);
    (
        cfg.alpha * ld + cfg.beta * ls,
        [cfg.alpha * gd[0] + cfg.beta * gs[0], cfg.alpha * gd[1] + cfg.beta * gs[1]],
    )
}

fn check_anchor(params: &ParamVector, anchor: &TaskAnchor) -> Result<()> {
    if anchor.anchor_params.len() != params.len() || anchor.fisher_diag.len() != params.len() {
        return Err(Error::config(format!(
            "anchor {:?} is not congruent with the parameters",
            anchor.task_name
        )));
    }
    Ok(())
}

/// `sum_anchors sum_i (lambda / 2) F_i (theta_i - theta*_i)^2`.
pub fn ewc_penalty(params: &ParamVector, anchors: &[TaskAnchor], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for a in anchors {
        check_anchor(params, a)?;
        let mut s = 0.0;
        for ((t, t0), f) in params
            .as_slice()
            .iter()
            .zip(a.anchor_params.as_slice())
            .zip(&a.fisher_diag)
        {
            let d = t - t0;
            s += f * d * d;
        }
        total += 0.5 * lambda * s;
    }
    Ok(total)
}

/// Gradient of [`ewc_penalty`]: `lambda * F_i * (theta_i - theta*_i)` summed over anchors.
pub fn ewc_penalty_grad(params: &ParamVector, anchors: &[TaskAnchor], lambda: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; params.len()];
    for a in anchors {
        check_anchor(params, a)?;
        for (i, gi) in g.iter_mut().enumerate() {
            *gi += lambda * a.fisher_diag[i] * (params.as_slice()[i] - a.anchor_params.as_slice()[i]);
        }
    }
    Ok(g)
}

/// Empirical diagonal Fisher `(1/N) sum_n (d ln p(y_n | x_n) / d theta)^2` over
/// `N = min(sample_count, rows)` rows drawn without replacement.
pub fn estimate_fisher_from(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    labels: &[u8],
    sample_count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if inputs.nrows() == 0 {
        return Err(Error::config("Fisher estimation needs a non-empty dataset"));
    }
    if labels.len() != inputs.nrows() {
        return Err(Error::config("labels and inputs differ in length"));
    }
    if sample_count == 0 {
        return Err(Error::config("fisher_sample_count must be at least 1"));
    }
    let n = sample_count.min(inputs.nrows());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, inputs.nrows(), n).into_vec();
    let mut acc = vec![0.0; spec.param_count()];
    for chunk in picked.chunks(512) {
        let x = gather_rows(inputs, chunk);
        let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
        let part = squared_gradient_sum(spec, params, x.view(), &LabelLoss { labels: &y })?;
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
    let inv = 1.0 / n as f64;
    Ok(acc.into_iter().map(|v| v * inv).collect())
}

/// Diagonal Fisher of `params` on the train split of `dataset`.
pub fn estimate_fisher(
    spec: &ModelSpec,
    params: &ParamVector,
    dataset: &TaskDataset,
    cfg: &EwcConfig,
    run: &RunConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if dataset.train.is_empty() {
        return Err(Error::config(format!("task {:?} has an empty train split", dataset.name)));
    }
    let x = eval_inputs(&dataset.train, run)?;
    let y: Vec<u8> = dataset.train.iter().map(|s| s.label).collect();
    estimate_fisher_from(spec, params, x.view(), &y, cfg.fisher_sample_count, seed)
}

/// Side of the model input window: the crop size when cropping, else the patch.
pub fn input_side(run: &RunConfig) -> usize {
    match run.crop {
        Some(c) if c.enabled => c.size,
        _ => PATCH_SIDE,
    }
}

/// Model inputs are pixels shifted to zero mean grey.
pub const INPUT_OFFSET: f64 = 0.5;

fn write_window(dst: &mut [f64], patch: &Patch, side: usize, r0: usize, c0: usize) {
    for r in 0..side {
        let src = &patch.pixels()[(r0 + r) * PATCH_SIDE + c0..(r0 + r) * PATCH_SIDE + c0 + side];
        for (d, p) in dst[r * side..(r + 1) * side].iter_mut().zip(src) {
            *d = p - INPUT_OFFSET;
        }
    }
}

/// Model inputs for evaluation: full patches, or center crops when enabled.
pub fn eval_inputs(samples: &[Sample], run: &RunConfig) -> Result<Array2<f64>> {
    let patches: Vec<&Patch> = samples.iter().map(|s| &s.patch).collect();
    patch_inputs(&patches, run)
}

/// [`eval_inputs`] for bare patches.
pub fn patch_inputs(patches: &[&Patch], run: &RunConfig) -> Result<Array2<f64>> {
    let side = input_side(run);
    if side == 0 || side > PATCH_SIDE {
        return Err(Error::config(format!("crop size {side} outside 1..={PATCH_SIDE}")));
    }
    let off = (PATCH_SIDE - side) / 2;
    let mut x = Array2::zeros((patches.len(), side * side));
    for (r, p) in patches.iter().enumerate() {
        write_window(x.row_mut(r).as_slice_mut().expect("contiguous"), p, side, off, off);
    }
    Ok(x)
}

fn train_inputs(samples: &[&Sample], run: &RunConfig, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let side = input_side(run);
    let span = PATCH_SIDE - side;
    let mut x = Array2::zeros((samples.len(), side * side));
    for (r, s) in samples.iter().enumerate() {
        let (r0, c0) = if span > 0 {
            (rng.random_range(0..=span), rng.random_range(0..=span))
        } else {
            (0, 0)
        };
        write_window(x.row_mut(r).as_slice_mut().expect("contiguous"), &s.patch, side, r0, c0);
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean minibatch objective, regularizer included.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub task_name: String,
    pub strategy: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// A frozen model whose outputs supervise the student.
#[derive(Debug, Clone, Copy)]
pub struct Teacher<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a ParamVector,
}

/// Trains `params` on one task and returns the best-validation weights.
///
/// Transfer minimizes the label cross-entropy; KD adds the distillation term
/// against `teacher`; EWC adds [`ewc_penalty`] over `anchors`. The penalty is
/// applied as an exact proximal step after each momentum update, which keeps
/// the iteration stable for arbitrarily large `lambda` and is a no-op at
/// `lambda = 0`.
#[allow(clippy::too_many_arguments)]
pub fn train_task(
    spec: &ModelSpec,
    params: &ParamVector,
    task: &TaskDataset,
    strategy: &Strategy,
    teacher: Option<Teacher<'_>>,
    anchors: &[TaskAnchor],
    run: &RunConfig,
    stream: u64,
) -> Result<(ParamVector, TrainTrace)> {
    run.validate()?;
    strategy.validate()?;
    params.check_congruent(spec)?;
    let side = input_side(run);
    if spec.input_width() != side * side {
        return Err(Error::config(format!(
            "model input width {} does not match {side}x{side} inputs",
            spec.input_width()
        )));
    }
    if task.train.is_empty() || task.val.is_empty() {
        return Err(Error::config(format!("task {:?} needs train and val samples", task.name)));
    }
    if let (Strategy::Kd(_), None) = (strategy, teacher) {
        return Err(Error::config("knowledge distillation needs a teacher model"));
    }
    if let Some(t) = teacher {
        t.params.check_congruent(t.spec)?;
        if t.spec.input_width() != spec.input_width() {
            return Err(Error::config("teacher and student disagree on input width"));
        }
    }
    let ewc = match strategy {
        Strategy::Ewc(cfg) => {
            for a in anchors {
                check_anchor(params, a)?;
            }
            Some(ProximalPull::new(anchors, cfg.lambda, params.len()))
        }
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(run.seed, stream));
    let mut opt = OptimizerState::new(params.len(), run.lr_initial, run.lr_min, run.momentum, run.max_epochs)?;
    let val_x = eval_inputs(&task.val, run)?;
    let val_y: Vec<u8> = task.val.iter().map(|s| s.label).collect();

    let mut current = params.clone();
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..task.train.len()).collect();

    for epoch in 0..run.max_epochs {
        let lr = cosine_lr(epoch, &opt)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(run.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &task.train[i]).collect();
            let x = train_inputs(&samples, run, &mut rng);
            let y: Vec<u8> = samples.iter().map(|s| s.label).collect();
            let (loss, grad) = match (strategy, teacher) {
                (Strategy::Kd(cfg), Some(t)) => {
                    let tl = forward_batch(t.spec, t.params, x.view())?;
                    let kd = |row: usize, s: &Logits| {
                        kd_loss_grad(&Logits([tl[[row, 0]], tl[[row, 1]]]), s, y[row], cfg)
                    };
                    backward(spec, &current, x.view(), &kd)
                }
                _ => backward(spec, &current, x.view(), &LabelLoss { labels: &y }),
            }
            .map_err(|e| at_epoch(e, epoch))?;
            let penalty = match (&ewc, strategy) {
                (Some(_), Strategy::Ewc(cfg)) => ewc_penalty(&current, anchors, cfg.lambda)?,
                _ => 0.0,
            };
            let total = loss + penalty;
            if !total.is_finite() {
                return Err(Error::numeric("non-finite training loss", format!("epoch {epoch}")));
            }
            sgd_step(&mut current, &grad, &mut opt, lr).map_err(|e| at_epoch(e, epoch))?;
            if let Some(pull) = &ewc {
                pull.apply(&mut current, lr);
            }
            loss_sum += total;
            batches += 1;
        }

        let val_accuracy = accuracy(spec, &current, val_x.view(), &val_y)?;
        records.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / batches as f64,
            val_accuracy,
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best_epoch = epoch;
            best = current.clone();
        } else if epoch - best_epoch >= run.patience {
            break;
        }
    }

    Ok((
        best,
        TrainTrace {
            task_name: task.name.clone(),
            strategy: strategy.name().to_string(),
            epochs: records,
            best_epoch,
            best_val_accuracy: best_acc,
        },
    ))
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric { what, location } => Error::numeric(what, format!("epoch {epoch}, {location}")),
        other => other,
    }
}

/// Implicit step for the summed quadratic `(lambda/2) sum_k F_k (theta - c_k)^2`:
/// `theta <- (theta + lr*lambda*sum_k F_k c_k) / (1 + lr*lambda*sum_k F_k)`.
struct ProximalPull {
    lambda: f64,
    fisher_sum: Vec<f64>,
    weighted_center: Vec<f64>,
}

impl ProximalPull {
    fn new(anchors: &[TaskAnchor], lambda: f64, n: usize) -> Self {
        let mut fisher_sum = vec![0.0; n];
        let mut weighted_center = vec![0.0; n];
        for a in anchors {
            for i in 0..n {
                fisher_sum[i] += a.fisher_diag[i];
                weighted_center[i] += a.fisher_diag[i] * a.anchor_params.as_slice()[i];
            }
        }
        ProximalPull {
            lambda,
            fisher_sum,
            weighted_center,
        }
    }

    fn apply(&self, params: &mut ParamVector, lr: f64) {
        let step = lr * self.lambda;
        for ((t, f), fc) in params
            .as_mut_slice()
            .iter_mut()
            .zip(&self.fisher_sum)
            .zip(&self.weighted_center)
        {
            *t = (*t + step * fc) / (1.0 + step * f);
        }
    }
}

/// Stream-level record of one completed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceOutcome {
    pub params: ParamVector,
    pub matrix: EvalMatrix,
    pub checkpoints: Vec<Checkpoint>,
}

/// Trains on `stream` in order, evaluating every task of `eval_tasks` after
/// each stage. The first stage is always plain supervised training.
pub fn train_sequence(
    spec: &ModelSpec,
    stream: &[TaskDataset],
    strategy: &Strategy,
    run: &RunConfig,
    eval_tasks: &[TaskDataset],
) -> Result<SequenceOutcome> {
    train_sequence_with(spec, stream, strategy, run, eval_tasks, |_, _| {})
}

/// [`train_sequence`] with a callback after each completed stage, handed the
/// stage index and the matrix so far.
pub fn train_sequence_with(
    spec: &ModelSpec,
    stream: &[TaskDataset],
    strategy: &Strategy,
    run: &RunConfig,
    eval_tasks: &[TaskDataset],
    mut on_stage: impl FnMut(usize, &EvalMatrix),
) -> Result<SequenceOutcome> {
    if stream.is_empty() {
        return Err(Error::config("task stream is empty"));
    }
    strategy.validate()?;
    run.validate()?;
    let eval_x: Vec<(Array2<f64>, Vec<u8>)> = eval_tasks
        .iter()
        .map(|t| {
            if t.test.is_empty() {
                return Err(Error::config(format!("eval task {:?} has an empty test split", t.name)));
            }
            Ok((eval_inputs(&t.test, run)?, t.test.iter().map(|s| s.label).collect()))
        })
        .collect::<Result<_>>()?;

    let mut params = ParamVector::he_uniform(spec, mix_seed(run.seed, INIT_STREAM));
    let mut matrix = EvalMatrix::new(eval_tasks.iter().map(|t| t.name.clone()).collect());
    let mut checkpoints = Vec::with_capacity(stream.len());
    let mut anchors = AnchorStore::new(match strategy {
        Strategy::Ewc(c) => c.accumulation,
        _ => Accumulation::PerTaskList,
    });
    let mut trained_on = Vec::new();

    for (stage, task) in stream.iter().enumerate() {
        let stage_strategy = if stage == 0 { Strategy::Transfer } else { *strategy };
        let teacher_params = params.clone();
        let teacher = match stage_strategy {
            Strategy::Kd(_) => Some(Teacher {
                spec,
                params: &teacher_params,
            }),
            _ => None,
        };
        let (next, trace) = train_task(
            spec,
            &params,
            task,
            &stage_strategy,
            teacher,
            &anchors.anchors,
            run,
            stage as u64 + 1,
        )?;
        params = next;

        if let Strategy::Ewc(cfg) = strategy {
            let fisher = estimate_fisher(spec, &params, task, cfg, run, mix_seed(run.seed, FISHER_STREAM + stage as u64))?;
            anchors.push(TaskAnchor::new(params.clone(), fisher, task.name.clone())?)?;
        }

        let row = eval_x
            .iter()
            .map(|(x, y)| accuracy(spec, &params, x.view(), y))
            .collect::<Result<Vec<_>>>()?;
        matrix.push_row(row)?;
        trained_on.push(task.name.clone());
        checkpoints.push(Checkpoint::new(
            spec.clone(),
            params.clone(),
            *strategy,
            run.seed,
            trained_on.clone(),
            trace,
        ));
        on_stage(stage, &matrix);
    }

    Ok(SequenceOutcome {
        params,
        matrix,
        checkpoints,
    })
}

pub const INIT_STREAM: u64 = 0x1417;
pub const FISHER_STREAM: u64 = 0xF15E_0000;
