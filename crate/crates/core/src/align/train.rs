//! Deterministic single-threaded training loop.
//!
//! Updates apply only to masked parameters; everything outside the mask
//! stays bit-identical to its initial value. The reference model is frozen,
//! so its per-example log-probabilities are computed once up front.

use super::{
    combined_loss_and_grad, loss_parts, mask_for_strategy, preference_accuracy, AlignConfig,
    AlignError, ParamMask, PreferenceExample,
};
use crate::tinylm::{
    sequence_logprob, sequence_logprob_backward, sequence_logprob_with_trace, GradientSet,
    ModelParams, Tensor, TokenSequence, Vocab,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Gradient update rule. Plain SGD keeps finite-difference checks clean;
/// Adam is available for faster toy convergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd
    }
}

impl Optimizer {
    pub fn adam_default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Loss terms observed at one training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub example_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
    pub dpo_loss: f64,
    pub sft_loss: f64,
    pub combined_loss: f64,
    pub margin: f64,
}

/// Per-step records plus held-out summary statistics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub heldout_accuracy: Option<f64>,
    pub heldout_mean_margin: Option<f64>,
}

impl TrainReport {
    /// One JSON object per step, then a summary line.
    pub fn write_jsonl(&self, path: &Path, meta: Option<serde_json::Value>) -> Result<(), AlignError> {
        let mut f = std::fs::File::create(path)?;
        if let Some(meta) = meta {
            writeln!(f, "{}", serde_json::json!({ "_meta": meta }))?;
        }
        for rec in &self.steps {
            writeln!(f, "{}", serde_json::to_string(rec).expect("serializable record"))?;
        }
        writeln!(
            f,
            "{}",
            serde_json::json!({
                "summary": {
                    "steps": self.steps.len(),
                    "heldout_accuracy": self.heldout_accuracy,
                    "heldout_mean_margin": self.heldout_mean_margin,
                }
            })
        )?;
        Ok(())
    }
}

struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> =
            (0..params.num_slots()).map(|i| params.slot(i).1.zeros_like()).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

fn apply_update(
    policy: &mut ModelParams,
    grads: &GradientSet,
    mask: &ParamMask,
    config: &AlignConfig,
    adam: &mut Option<AdamState>,
) {
    if let Some(state) = adam.as_mut() {
        state.t += 1;
    }
    for i in 0..policy.num_slots() {
        let masked = {
            let (key, _) = policy.slot(i);
            mask.contains(key.group, key.layer)
        };
        if !masked {
            continue;
        }
        let (_, grad) = grads.slot(i);
        let g = grad.data();
        match (&config.optimizer, adam.as_mut()) {
            (Optimizer::Sgd, _) => {
                let (_, tensor) = policy.slot_mut(i);
                for (p, &gv) in tensor.data_mut().iter_mut().zip(g) {
                    *p -= config.learning_rate * gv;
                }
            }
            (Optimizer::Adam { beta1, beta2, eps }, Some(state)) => {
                let t = state.t as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let m = state.m[i].data_mut();
                let v = state.v[i].data_mut();
                let (_, tensor) = policy.slot_mut(i);
                for (j, (p, &gv)) in tensor.data_mut().iter_mut().zip(g).enumerate() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    *p -= config.learning_rate * mhat / (vhat.sqrt() + eps);
                }
            }
            (Optimizer::Adam { .. }, None) => unreachable!("adam state initialized with optimizer"),
        }
    }
}

/// Runs preference training and returns the updated policy with a report.
///
/// Deterministic for a fixed config seed: example order is shuffled by a
/// seeded generator and all math is sequential f64. A non-finite loss
/// aborts immediately rather than being skipped.
pub fn train(
    policy: &ModelParams,
    reference: &ModelParams,
    vocab: &Vocab,
    train_set: &[PreferenceExample],
    heldout: &[PreferenceExample],
    config: &AlignConfig,
) -> Result<(ModelParams, TrainReport), AlignError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(AlignError::EmptyDataset);
    }
    if !policy.same_shape(reference) {
        return Err(AlignError::ShapeMismatch);
    }
    let mask = mask_for_strategy(policy, config.mask_strategy)?;
    let mut policy = policy.clone();
    let mut adam = match config.optimizer {
        Optimizer::Adam { .. } => Some(AdamState::new(&policy)),
        Optimizer::Sgd => None,
    };

    // The reference never moves; score each example once.
    let mut ref_cache = Vec::with_capacity(train_set.len());
    for ex in train_set {
        let rpc = sequence_logprob(reference, vocab, &ex.prompt, &ex.chosen)?;
        let rpr = sequence_logprob(reference, vocab, &ex.prompt, &ex.rejected)?;
        ref_cache.push((rpc, rpr));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut report = TrainReport::default();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        for idx in order {
            let ex = &train_set[idx];
            let (parts, grads) = combined_loss_and_grad(
                &policy,
                reference,
                vocab,
                ex,
                config.beta,
                config.dpo_weight,
                Some(ref_cache[idx]),
            )?;
            if !parts.combined.is_finite() {
                return Err(AlignError::NonFiniteLoss { step, dpo: parts.dpo, sft: parts.sft });
            }
            apply_update(&mut policy, &grads, &mask, config, &mut adam);
            report.steps.push(StepRecord {
                step,
                epoch,
                example_index: idx,
                example_id: ex.id.clone(),
                dpo_loss: parts.dpo,
                sft_loss: parts.sft,
                combined_loss: parts.combined,
                margin: parts.margin,
            });
            step += 1;
        }
    }

    if !heldout.is_empty() {
        report.heldout_accuracy =
            Some(preference_accuracy(&policy, reference, vocab, heldout, config.beta)?);
        let mut total = 0.0;
        for ex in heldout {
            total += loss_parts(&policy, reference, vocab, ex, config.beta, config.dpo_weight, None)?
                .margin;
        }
        report.heldout_mean_margin = Some(total / heldout.len() as f64);
    }
    Ok((policy, report))
}

/// A plain supervised pair for warm-up training.
#[derive(Debug, Clone)]
pub struct SftExample {
    pub prompt: TokenSequence,
    pub target: TokenSequence,
}

/// Warm-up hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { learning_rate: 0.08, epochs: 4, seed: 1 }
    }
}

/// Full-parameter SGD on the negative log-likelihood of each target.
/// Used to stand up a written-style base model before preference training.
pub fn train_sft(
    policy: &ModelParams,
    vocab: &Vocab,
    data: &[SftExample],
    config: &SftConfig,
) -> Result<(ModelParams, Vec<f64>), AlignError> {
    if data.is_empty() {
        return Err(AlignError::EmptyDataset);
    }
    if config.learning_rate <= 0.0 || config.epochs == 0 {
        return Err(AlignError::InvalidConfig("sft needs positive lr and epochs".into()));
    }
    let mut policy = policy.clone();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut losses = Vec::new();
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for idx in order {
            let ex = &data[idx];
            let (logp, trace) =
                sequence_logprob_with_trace(&policy, vocab, &ex.prompt, &ex.target)?;
            let loss = -logp;
            if !loss.is_finite() {
                return Err(AlignError::NonFiniteLoss { step: losses.len(), dpo: 0.0, sft: loss });
            }
            let grads = sequence_logprob_backward(&policy, &trace, -1.0);
            for i in 0..policy.num_slots() {
                let (_, grad) = grads.slot(i);
                let g = grad.data();
                let (_, tensor) = policy.slot_mut(i);
                for (p, &gv) in tensor.data_mut().iter_mut().zip(g) {
                    *p -= config.learning_rate * gv;
                }
            }
            losses.push(loss);
        }
    }
    Ok((policy, losses))
}
