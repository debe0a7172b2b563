//! Optimization: teacher-forced maximum likelihood, self-critical sequence
//! fine-tuning, the mixed objective, Nesterov momentum with global-norm
//! clipping, and the validation-driven learning-rate schedule.
//!
//! Training runs in two phases. `train_ml` minimizes the mean per-token
//! negative log likelihood of the reference summaries, decaying the
//! learning rate by 0.1 whenever held-out greedy ROUGE-L stops improving
//! and stopping once it would fall below the floor. `finetune_scst` then
//! minimizes `lambda * rl + (1 - lambda) * ml`, where the reinforcement
//! term scores one sampled sequence per pair against the greedy decode as
//! baseline, rewards being single-reference ROUGE of the configured kind.
//! Both phases are bitwise deterministic for a fixed seed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{make_batches, Batch, BatchConfig, Pair, Vocabulary};
use crate::decode::{
    default_max_len, greedy_decode, sample_decode, DecodeError, Hypothesis,
};
use crate::model::{ModelError, ModelParams, TopicLookup};
use crate::rouge::{rouge_l, rouge_n};
use crate::tensor::{zero_grads, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {reason}")]
    Config { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("gradient for {name} is not finite; step aborted")]
    NonFiniteGradient { name: String },
    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },
    #[error("a framed target needs at least BOS and EOS")]
    EmptyTarget,
    #[error("the training set is empty")]
    EmptyDataset,
    #[error("epoch sink failed: {0}")]
    Sink(String),
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Sink(e.to_string())
    }
}

/// Which single-reference score rewards a sampled sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardMetric {
    #[serde(rename = "rouge-1")]
    Rouge1,
    #[serde(rename = "rouge-2")]
    Rouge2,
    #[serde(rename = "rouge-l")]
    RougeL,
}

impl std::str::FromStr for RewardMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rouge-1" => Ok(RewardMetric::Rouge1),
            "rouge-2" => Ok(RewardMetric::Rouge2),
            "rouge-l" => Ok(RewardMetric::RougeL),
            other => Err(format!(
                "unknown reward metric {other:?}; expected rouge-1, rouge-2, or rouge-l"
            )),
        }
    }
}

impl std::fmt::Display for RewardMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardMetric::Rouge1 => "rouge-1",
            RewardMetric::Rouge2 => "rouge-2",
            RewardMetric::RougeL => "rouge-l",
        })
    }
}

/// F-score of the chosen metric for one hypothesis against one reference,
/// in `[0, 1]`. Empty hypotheses score zero.
pub fn reward_of(metric: RewardMetric, hyp: &[u32], reference: &[u32]) -> f64 {
    let refs = [reference];
    let score = match metric {
        RewardMetric::Rouge1 => rouge_n(hyp, &refs, 1),
        RewardMetric::Rouge2 => rouge_n(hyp, &refs, 2),
        RewardMetric::RougeL => rouge_l(hyp, &refs),
    };
    score.map(|s| s.f1).unwrap_or(0.0)
}

/// All training knobs, defaulting to the published full-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate for the maximum-likelihood phase.
    pub lr_ml: f64,
    /// Multiplier applied when validation ROUGE stops improving.
    pub lr_decay: f64,
    /// Training stops once the decayed rate would fall below this.
    pub lr_floor: f64,
    /// Learning rate for the reinforcement phase.
    pub lr_rl: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Weight of the reinforcement term in the mixed objective.
    pub lambda_mixed: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub max_epochs: usize,
    pub reward: RewardMetric,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_ml: 0.25,
            lr_decay: 0.1,
            lr_floor: 1e-5,
            lr_rl: 1e-4,
            momentum: 0.99,
            batch_size: 32,
            lambda_mixed: 0.99,
            grad_clip_norm: Some(0.1),
            max_epochs: 20,
            reward: RewardMetric::RougeL,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |reason: String| Err(TrainError::Config { reason });
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.lr_ml) || !pos(self.lr_rl) || !pos(self.lr_floor) {
            return fail("learning rates and the floor must be positive".into());
        }
        if !pos(self.lr_decay) || self.lr_decay >= 1.0 {
            return fail(format!("lr_decay must lie in (0, 1), got {}", self.lr_decay));
        }
        if !(0.0..=1.0).contains(&self.lambda_mixed) {
            return fail(format!("lambda_mixed must lie in [0, 1], got {}", self.lambda_mixed));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !pos(c) {
                return fail(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

// ── optimizer ──

/// Nesterov accelerated gradient over a fixed set of named tensors. The
/// stored parameters are kept at the lookahead point, giving the standard
/// parameter-space form of the update: with `g` the gradient at the stored
/// value,
///
/// ```text
/// v  <-  mu * v - lr * g
/// theta  <-  theta + mu * v - lr * g
/// ```
///
/// At `mu = 0` this is exactly plain SGD. Gradients are validated finite
/// and globally norm-clipped before any parameter moves, so a failed step
/// mutates nothing.
pub struct Optimizer {
    tensors: Vec<(String, Tensor)>,
    velocity: Vec<Vec<f64>>,
    pub lr: f64,
    pub momentum: f64,
    pub clip: Option<f64>,
}

impl Optimizer {
    pub fn new(tensors: Vec<(String, Tensor)>, lr: f64, momentum: f64, clip: Option<f64>) -> Optimizer {
        let velocity = tensors.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Optimizer {
            tensors,
            velocity,
            lr,
            momentum,
            clip,
        }
    }

    pub fn for_model(params: &ModelParams, lr: f64, momentum: f64, clip: Option<f64>) -> Optimizer {
        Optimizer::new(params.named_tensors(), lr, momentum, clip)
    }

    /// Applies one update from the gradients currently stored on the
    /// tensors. Missing gradients count as zero.
    pub fn step(&mut self) -> Result<(), TrainError> {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let g = t.grad().unwrap_or_else(|| vec![0.0; t.len()]);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient { name: name.clone() });
            }
            grads.push(g);
        }
        if let Some(limit) = self.clip {
            let norm = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > limit {
                let scale = limit / norm;
                for g in &mut grads {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                }
            }
        }
        let (lr, mu) = (self.lr, self.momentum);
        for (((_, t), v), g) in self.tensors.iter().zip(&mut self.velocity).zip(&grads) {
            t.update_values(|theta| {
                for i in 0..theta.len() {
                    let vn = mu * v[i] - lr * g[i];
                    theta[i] += mu * vn - lr * g[i];
                    v[i] = vn;
                }
            });
        }
        Ok(())
    }
}

// ── learning-rate schedule ──

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrDecision {
    Keep,
    Decay(f64),
    Stop,
}

/// Decides the next learning rate from the validation score history (one
/// entry per epoch, latest last). The rate decays whenever the latest
/// score fails to beat the best before it; a decay that would cross the
/// floor stops training instead.
pub fn lr_schedule(current_lr: f64, history: &[f64], decay: f64, floor: f64) -> LrDecision {
    let Some((&last, before)) = history.split_last() else {
        return LrDecision::Keep;
    };
    let best_before = before.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if last > best_before {
        return LrDecision::Keep;
    }
    let next = current_lr * decay;
    if next < floor {
        LrDecision::Stop
    } else {
        LrDecision::Decay(next)
    }
}

// ── losses ──

/// Teacher-forced negative log likelihood of a batch, summed over every
/// real target token (BOS is input only; EOS is predicted) and divided by
/// their count.
pub fn ml_loss(
    params: &ModelParams,
    topics: &TopicLookup,
    batch: &Batch,
) -> Result<Tensor, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mask = topics.vocab_mask();
    let mut total: Option<Tensor> = None;
    let mut tokens = 0usize;
    for i in 0..batch.len() {
        let (src, tgt, _) = batch.pair(i);
        if tgt.len() < 2 {
            return Err(TrainError::EmptyTarget);
        }
        let enc = params.encode(src, topics)?;
        let prefix = &tgt[..tgt.len() - 1];
        let states = params.decode_states(prefix, &enc, topics)?;
        let lp = params.output_log_probs(&states, &mask)?;
        let ids: Vec<usize> = tgt[1..].iter().map(|&t| t as usize).collect();
        let picked = lp.take_per_row(&ids)?.sum();
        tokens += ids.len();
        total = Some(match total {
            None => picked,
            Some(t) => t.add(&picked)?,
        });
    }
    let sum = total.expect("batch checked non-empty");
    Ok(sum.scale(-1.0 / tokens as f64))
}

/// Number of scored target tokens in a batch, the denominator of
/// [`ml_loss`].
pub fn batch_token_count(batch: &Batch) -> usize {
    batch.target_lens.iter().map(|&n| n.saturating_sub(1)).sum()
}

/// The multiplier in front of `log p(sampled)` in the self-critical loss:
/// `-(r_sample - r_greedy)`. The loss value is this times the sampled
/// sequence's log probability, so a sample beating the baseline (positive
/// difference, negative log probability) yields a positive loss whose
/// descent direction raises that sequence's probability.
pub fn scst_coefficient(r_sample: f64, r_greedy: f64) -> f64 {
    -(r_sample - r_greedy)
}

/// One self-critical evaluation for one pair.
pub struct RlOutcome {
    /// `-(r_sample - r_greedy) * log p(sampled)`; a zero-valued constant
    /// with no graph when the rewards tie.
    pub loss: Tensor,
    pub r_sample: f64,
    pub r_greedy: f64,
    pub greedy: Hypothesis,
    pub sampled: Hypothesis,
}

/// Scores one sampled rollout against the greedy baseline. Both decodes
/// run gradient-free; when rewards differ, the sampled sequence is
/// re-scored teacher-forced on the tape so the loss differentiates through
/// `log p(sampled)` only; rewards are constants.
pub fn rl_loss(
    params: &ModelParams,
    topics: &TopicLookup,
    source: &[u32],
    reference: &[u32],
    reward: impl Fn(&[u32], &[u32]) -> f64,
    max_len: usize,
    seed: u64,
) -> Result<RlOutcome, TrainError> {
    let greedy = greedy_decode(params, topics, source, max_len)?;
    let sampled = sample_decode(params, topics, source, max_len, seed)?;
    let r_greedy = reward(greedy.summary_tokens(), reference);
    let r_sample = reward(sampled.summary_tokens(), reference);
    let coeff = scst_coefficient(r_sample, r_greedy);
    let loss = if coeff == 0.0 {
        // tied rewards: exactly zero loss, exactly zero gradient
        Tensor::scalar(0.0)
    } else {
        let enc = params.encode(source, topics)?;
        let prefix = &sampled.tokens[..sampled.tokens.len() - 1];
        let states = params.decode_states(prefix, &enc, topics)?;
        let lp = params.output_log_probs(&states, &topics.vocab_mask())?;
        let ids: Vec<usize> = sampled.tokens[1..].iter().map(|&t| t as usize).collect();
        lp.take_per_row(&ids)?.sum().scale(coeff)
    };
    Ok(RlOutcome {
        loss,
        r_sample,
        r_greedy,
        greedy,
        sampled,
    })
}

/// `lambda * rl + (1 - lambda) * ml`, affine in both inputs.
pub fn mixed_loss(rl: &Tensor, ml: &Tensor, lambda: f64) -> Result<Tensor, TrainError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TrainError::Config {
            reason: format!("mixing weight must lie in [0, 1], got {lambda}"),
        });
    }
    Ok(rl.scale(lambda).add(&ml.scale(1.0 - lambda))?)
}

// ── epoch logging ──

/// One tab-separated log record per epoch. Fields that do not apply to a
/// phase render as `-`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLine {
    pub epoch: usize,
    pub split: &'static str,
    pub lr: f64,
    pub ml_loss: f64,
    pub rl_loss: Option<f64>,
    pub mixed_loss: Option<f64>,
    pub val_rouge_l: Option<f64>,
}

impl EpochLine {
    pub const TSV_HEADER: &'static str = "epoch\tsplit\tlr\tml_loss\trl_loss\tmixed_loss\tval_rouge_l";

    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch,
            self.split,
            self.lr,
            self.ml_loss,
            opt(self.rl_loss),
            opt(self.mixed_loss),
            opt(self.val_rouge_l),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Ran all configured epochs.
    MaxEpochs,
    /// The decayed learning rate crossed the floor.
    LrFloor,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLine>,
    pub stop: StopReason,
    pub best_val: Option<f64>,
    pub final_lr: f64,
}

// ── drivers ──

fn batch_config(params: &ModelParams, cfg: &TrainConfig, seed: u64) -> BatchConfig {
    BatchConfig {
        batch_size: cfg.batch_size,
        max_source_len: params.config.max_source_len,
        max_target_len: params.config.max_target_len,
        seed,
    }
}

/// Mean greedy ROUGE-L F-score over a split, the schedule's validation
/// signal.
pub fn mean_greedy_rouge_l(
    params: &ModelParams,
    topics: &TopicLookup,
    vocab: &Vocabulary,
    pairs: &[Pair],
) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for pair in pairs {
        let src = vocab.encode(&pair.source[..pair.source.len().min(params.config.max_source_len)]);
        let reference =
            vocab.encode(&pair.target[..pair.target.len().min(params.config.max_target_len)]);
        let hyp = greedy_decode(params, topics, &src, default_max_len(src.len()))?;
        total += rouge_l(hyp.summary_tokens(), &[&reference[..]])
            .map(|s| s.f1)
            .unwrap_or(0.0);
    }
    Ok(total / pairs.len() as f64)
}

/// Phase one: teacher-forced training under the decay-on-plateau schedule.
/// `on_epoch` fires after every epoch (checkpointing hook); the validation
/// split drives the schedule and may equal the training split for
/// overfitting runs. An empty validation split disables the schedule.
pub fn train_ml(
    params: &ModelParams,
    topics: &TopicLookup,
    vocab: &Vocabulary,
    train: &[Pair],
    val: &[Pair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&ModelParams, &EpochLine) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut opt = Optimizer::for_model(params, cfg.lr_ml, cfg.momentum, cfg.grad_clip_norm);
    let tensors = params.tensors();
    let mut history: Vec<f64> = Vec::new();
    let mut log = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(
            train,
            vocab,
            |id| topics.is_topic(id),
            &batch_config(params, cfg, cfg.seed.wrapping_add(epoch as u64)),
        );
        let mut loss_sum = 0.0;
        let mut token_total = 0usize;
        for batch in &batches {
            zero_grads(&tensors);
            let loss = ml_loss(params, topics, batch)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            loss.backward()?;
            opt.step()?;
            let tokens = batch_token_count(batch);
            loss_sum += value * tokens as f64;
            token_total += tokens;
        }
        let epoch_ml = loss_sum / token_total.max(1) as f64;
        log::debug!(
            "ml epoch {epoch}: loss sum {loss_sum}, mean {epoch_ml} over {token_total} tokens"
        );
        let val_rouge = if val.is_empty() {
            None
        } else {
            Some(mean_greedy_rouge_l(params, topics, vocab, val)?)
        };
        let line = EpochLine {
            epoch,
            split: "train",
            lr: opt.lr,
            ml_loss: epoch_ml,
            rl_loss: None,
            mixed_loss: None,
            val_rouge_l: val_rouge,
        };
        on_epoch(params, &line)?;
        log.push(line);
        if let Some(r) = val_rouge {
            history.push(r);
            match lr_schedule(opt.lr, &history, cfg.lr_decay, cfg.lr_floor) {
                LrDecision::Keep => {}
                LrDecision::Decay(next) => opt.lr = next,
                LrDecision::Stop => {
                    stop = StopReason::LrFloor;
                    break;
                }
            }
        }
    }
    let best_val = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(TrainOutcome {
        log,
        stop,
        best_val: if history.is_empty() { None } else { Some(best_val) },
        final_lr: opt.lr,
    })
}

/// Phase two: self-critical fine-tuning of an ML-trained model under the
/// mixed objective at a fixed learning rate. Per-pair sampling seeds
/// derive from the config seed, epoch, and pair position, so runs are
/// reproducible.
pub fn finetune_scst(
    params: &ModelParams,
    topics: &TopicLookup,
    vocab: &Vocabulary,
    train: &[Pair],
    val: &[Pair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&ModelParams, &EpochLine) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut opt = Optimizer::for_model(params, cfg.lr_rl, cfg.momentum, cfg.grad_clip_norm);
    let tensors = params.tensors();
    let mut log = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(
            train,
            vocab,
            |id| topics.is_topic(id),
            &batch_config(params, cfg, cfg.seed ^ 0x5c57_0000u64.wrapping_add(epoch as u64)),
        );
        let mut ml_sum = 0.0;
        let mut token_total = 0usize;
        let mut rl_sum = 0.0;
        let mut mixed_sum = 0.0;
        let mut pair_total = 0usize;
        let mut reward_sample = 0.0;
        let mut reward_greedy = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            zero_grads(&tensors);
            let ml = ml_loss(params, topics, batch)?;
            let mut rl_total: Option<Tensor> = None;
            for i in 0..batch.len() {
                let (src, tgt, _) = batch.pair(i);
                let reference = &tgt[1..tgt.len() - 1];
                let seed = cfg
                    .seed
                    .wrapping_add((epoch as u64) << 40)
                    .wrapping_add((b as u64) << 20)
                    .wrapping_add(i as u64);
                let out = rl_loss(
                    params,
                    topics,
                    src,
                    reference,
                    |h, r| reward_of(cfg.reward, h, r),
                    default_max_len(src.len()),
                    seed,
                )?;
                reward_sample += out.r_sample;
                reward_greedy += out.r_greedy;
                rl_total = Some(match rl_total {
                    None => out.loss,
                    Some(t) => t.add(&out.loss)?,
                });
            }
            let rl = rl_total
                .expect("batches are never empty")
                .scale(1.0 / batch.len() as f64);
            let mixed = mixed_loss(&rl, &ml, cfg.lambda_mixed)?;
            let value = mixed.item()?;
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            mixed.backward()?;
            opt.step()?;
            let tokens = batch_token_count(batch);
            ml_sum += ml.item()? * tokens as f64;
            token_total += tokens;
            rl_sum += rl.item()? * batch.len() as f64;
            mixed_sum += value * batch.len() as f64;
            pair_total += batch.len();
        }
        let val_rouge = if val.is_empty() {
            None
        } else {
            Some(mean_greedy_rouge_l(params, topics, vocab, val)?)
        };
        log::debug!(
            "scst epoch {epoch}: mean sampled reward {:.4}, mean greedy reward {:.4}",
            reward_sample / pair_total.max(1) as f64,
            reward_greedy / pair_total.max(1) as f64,
        );
        let line = EpochLine {
            epoch,
            split: "train",
            lr: opt.lr,
            ml_loss: ml_sum / token_total.max(1) as f64,
            rl_loss: Some(rl_sum / pair_total.max(1) as f64),
            mixed_loss: Some(mixed_sum / pair_total.max(1) as f64),
            val_rouge_l: val_rouge,
        };
        on_epoch(params, &line)?;
        log.push(line);
        if let Some(r) = val_rouge {
            history.push(r);
        }
    }
    let best_val = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(TrainOutcome {
        log,
        stop: StopReason::MaxEpochs,
        best_val: if history.is_empty() { None } else { Some(best_val) },
        final_lr: opt.lr,
    })
}
