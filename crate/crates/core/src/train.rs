//! Losses, AdamW with decoupled weight decay, the warmup + cosine schedule,
//! and the epoch loop.
//!
//! Classification trains with class-weighted sigmoid cross-entropy. The
//! printed form of the loss has only the positive term; that form cannot
//! train a discriminative sigmoid on its own, so the default mode keeps the
//! weighted positive term and adds the standard unweighted negative term.
//! The literal single-term form stays available for fidelity experiments.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ModalitySchema, SequenceSet, TaskKind, Vocabulary};
use crate::error::{Error, Result};
use crate::mra::{forward_on_tape, BoundModel, ModelConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WsceMode {
    /// Weighted positive term plus the standard negative term.
    #[default]
    FullBce,
    /// The positive term alone, exactly as printed.
    LiteralEq16,
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub task: TaskKind,
    pub class_weights: Option<Vec<f64>>,
    pub wsce_mode: WsceMode,
}

impl LossConfig {
    pub fn unweighted(task: TaskKind) -> Self {
        LossConfig {
            task,
            class_weights: None,
            wsce_mode: WsceMode::FullBce,
        }
    }
}

/// Inverse-frequency class weights `w_k = 1/N_k` from a multi-hot label
/// matrix. Every class must occur at least once.
pub fn class_weights(labels: &[Vec<u8>]) -> Result<Vec<f64>> {
    let k = labels
        .first()
        .ok_or_else(|| Error::Ingestion("class_weights of an empty label matrix".into()))?
        .len();
    let mut counts = vec![0usize; k];
    for row in labels {
        if row.len() != k {
            return Err(Error::Dimension(format!(
                "label row has {} entries, expected {k}",
                row.len()
            )));
        }
        for (c, y) in counts.iter_mut().zip(row) {
            *c += *y as usize;
        }
    }
    counts
        .iter()
        .enumerate()
        .map(|(index, c)| {
            if *c == 0 {
                Err(Error::UnsupportedClass { index })
            } else {
                Ok(1.0 / *c as f64)
            }
        })
        .collect()
}

/// Class-weighted sigmoid cross-entropy over a logit matrix `[N, K]`,
/// assembled from numerically stable log-sigmoid terms.
pub fn wsce_loss(
    tape: &mut Tape,
    logits: Var,
    y: &[Vec<u8>],
    w: &[f64],
    mode: WsceMode,
) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let (n, k) = match shape.as_slice() {
        [n, k] => (*n, *k),
        other => {
            return Err(Error::Dimension(format!(
                "wsce_loss expects [N, K] logits, got {other:?}"
            )))
        }
    };
    if y.len() != n || y.iter().any(|row| row.len() != k) || w.len() != k {
        return Err(Error::Dimension(format!(
            "wsce_loss shapes disagree: logits [{n}, {k}], {} label rows, {} weights",
            y.len(),
            w.len()
        )));
    }
    let mut pos_w = Vec::with_capacity(n * k);
    let mut neg_w = Vec::with_capacity(n * k);
    for row in y {
        for (j, bit) in row.iter().enumerate() {
            pos_w.push(w[j] * *bit as f64);
            neg_w.push(1.0 - *bit as f64);
        }
    }
    let log_pos = tape.log_sigmoid(logits);
    let pos_term = tape.weighted_sum(log_pos, &pos_w)?;
    let total = match mode {
        WsceMode::LiteralEq16 => pos_term,
        WsceMode::FullBce => {
            let neg_logits = tape.neg(logits);
            let log_neg = tape.log_sigmoid(neg_logits);
            let neg_term = tape.weighted_sum(log_neg, &neg_w)?;
            tape.add(pos_term, neg_term)?
        }
    };
    Ok(tape.scale_const(total, -1.0 / n as f64))
}

/// Root mean squared error between a prediction node and fixed targets.
/// Differentiable away from the zero-residual point.
pub fn rmse_loss(tape: &mut Tape, predictions: Var, targets: &[f64]) -> Result<Var> {
    let shape = tape.shape(predictions).to_vec();
    let numel: usize = shape.iter().product();
    if numel != targets.len() || targets.is_empty() {
        return Err(Error::Dimension(format!(
            "rmse_loss: {} predictions vs {} targets",
            numel,
            targets.len()
        )));
    }
    let t = tape.constant(shape, targets.to_vec())?;
    let neg_t = tape.neg(t);
    let diff = tape.add(predictions, neg_t)?;
    let sq = tape.dot(diff, diff)?;
    let mse = tape.scale_const(sq, 1.0 / targets.len() as f64);
    tape.sqrt(mse)
}

/// AdamW state: per-parameter moment accumulators plus the schedule
/// position. Moment keys mirror the parameter collection.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    moments: IndexMap<String, (Vec<f64>, Vec<f64>)>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &Parameters, cfg: &OptimizerConfig, steps_per_epoch: usize) -> Result<Self> {
        if cfg.total_epochs <= cfg.warmup_epochs {
            return Err(Error::Config(format!(
                "total_epochs ({}) must exceed warmup_epochs ({})",
                cfg.total_epochs, cfg.warmup_epochs
            )));
        }
        if steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        Ok(OptimizerState {
            moments: params
                .iter()
                .map(|(name, t)| (name.to_string(), (vec![0.0; t.numel()], vec![0.0; t.numel()])))
                .collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
            peak_lr: cfg.peak_lr,
            warmup_epochs: cfg.warmup_epochs,
            total_epochs: cfg.total_epochs,
            steps_per_epoch,
        })
    }
}

/// Learning rate at a global step: linear from 0 to the peak over the
/// warmup epochs, then cosine annealing to 0 at `total_epochs`. Continuous
/// at the warmup boundary.
pub fn lr_at(global_step: u64, state: &OptimizerState) -> f64 {
    let e = global_step as f64 / state.steps_per_epoch as f64;
    let warmup = state.warmup_epochs as f64;
    let total = state.total_epochs as f64;
    if e < warmup {
        state.peak_lr * e / warmup
    } else {
        let progress = ((e - warmup) / (total - warmup)).min(1.0);
        state.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// One AdamW update: bias-corrected Adam moments at the scheduled rate,
/// with decay `theta -= lr * lambda * theta` applied separately from the
/// gradient term, to matrix-shaped parameters only (biases and gain
/// vectors are not decayed).
pub fn adamw_step(params: &mut Parameters, state: &mut OptimizerState) -> Result<()> {
    let lr = lr_at(state.step, state);
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, tensor) in params.iter_mut() {
        let grad = tensor
            .grad()
            .ok_or_else(|| Error::Config(format!("gradient not populated for parameter `{name}`")))?
            .to_vec();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(name.to_string()));
        }
        let (m, v) = state
            .moments
            .get_mut(name)
            .ok_or_else(|| Error::Lookup(format!("no optimizer moments for `{name}`")))?;
        let decay = if tensor.shape().len() == 2 { state.weight_decay } else { 0.0 };
        let theta = tensor.values_mut();
        for i in 0..theta.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let update = lr * m_hat / (v_hat.sqrt() + state.eps) + lr * decay * theta[i];
            theta[i] -= update;
        }
    }
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without a new best loss before a warning is logged.
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Rate used by the final update of this epoch.
    pub lr: f64,
}

/// Build the batch loss on a shared tape: one forward per sample, then the
/// task loss over the stacked predictions.
fn batch_loss(
    tape: &mut Tape,
    batch: &[&SequenceSet],
    vocab: &Vocabulary,
    schema: &ModalitySchema,
    bound: &BoundModel,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
) -> Result<Var> {
    let mut preds = Vec::with_capacity(batch.len());
    for sample in batch {
        preds.push(forward_on_tape(tape, sample, vocab, schema, bound, model_cfg)?.prediction);
    }
    let stacked = tape.concat_rows(&preds)?;
    match loss_cfg.task {
        TaskKind::Multilabel | TaskKind::Binary => {
            let labels: Vec<Vec<u8>> = batch
                .iter()
                .map(|s| s.label.as_multi_hot())
                .collect::<Result<_>>()?;
            let k = model_cfg.output_dim;
            let ones = vec![1.0; k];
            let w = loss_cfg.class_weights.as_deref().unwrap_or(&ones);
            wsce_loss(tape, stacked, &labels, w, loss_cfg.wsce_mode)
        }
        TaskKind::Regression => {
            let targets: Vec<f64> = batch
                .iter()
                .map(|s| s.label.as_real())
                .collect::<Result<_>>()?;
            rmse_loss(tape, stacked, &targets)
        }
    }
}

/// Seeded epoch loop: shuffle, then per batch forward -> loss -> backward ->
/// AdamW step -> gradient reset. Deterministic given the seed on one thread.
/// A non-decreasing loss over the patience window logs a warning and keeps
/// going.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    samples: &[SequenceSet],
    vocab: &Vocabulary,
    schema: &ModalitySchema,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    params: &mut Parameters,
    mut on_epoch: impl FnMut(&EpochStat, &Parameters) -> Result<()>,
) -> Result<Vec<EpochStat>> {
    if samples.is_empty() {
        return Err(Error::Ingestion("training set is empty".into()));
    }
    if train_cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let steps_per_epoch = samples.len().div_ceil(train_cfg.batch_size);
    let mut state = OptimizerState::new(params, &train_cfg.optimizer, steps_per_epoch)?;
    let mut rng = ChaCha20Rng::seed_from_u64(train_cfg.seed);
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let mut stats = Vec::with_capacity(state.total_epochs);
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..state.total_epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut last_lr = 0.0;
        for chunk in indices.chunks(train_cfg.batch_size) {
            let batch: Vec<&SequenceSet> = chunk.iter().map(|i| &samples[*i]).collect();
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, params, schema, model_cfg)?;
            let loss = batch_loss(&mut tape, &batch, vocab, schema, &bound, model_cfg, loss_cfg)?;
            let loss_value = tape.values(loss)[0];
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("batch loss at epoch {epoch}")));
            }
            loss_sum += loss_value * batch.len() as f64;
            last_lr = lr_at(state.step, &state);
            tape.backward(loss, params)?;
            adamw_step(params, &mut state)?;
            params.zero_grads();
        }
        let stat = EpochStat {
            epoch,
            mean_loss: loss_sum / samples.len() as f64,
            lr: last_lr,
        };
        if stat.mean_loss < best_loss {
            best_loss = stat.mean_loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience && train_cfg.patience > 0 {
                log::warn!(
                    "training loss has not improved for {since_best} epochs (best {best_loss:.6}, epoch {epoch})"
                );
                since_best = 0;
            }
        }
        on_epoch(&stat, params)?;
        stats.push(stat);
    }
    Ok(stats)
}
