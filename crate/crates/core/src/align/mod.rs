//! Preference alignment objectives and parameter-selection masks.
//!
//! The trainable quantity is the weighted combination
//! `L = w·L_dpo + (1−w)·L_sft`: a logistic preference loss over the policy's
//! advantage relative to a frozen reference, plus a negative log-likelihood
//! term on the chosen response. Masks restrict which parameter groups move.

mod dataset;
mod train;

pub use dataset::{
    load_preference_jsonl, save_preference_jsonl, tokenize_pair, RawPreferenceExample,
};
pub use train::{train, train_sft, Optimizer, SftConfig, SftExample, StepRecord, TrainReport};

use crate::tinylm::{
    sequence_logprob, sequence_logprob_backward, sequence_logprob_with_trace, GradientSet,
    ModelError, ModelParams, ParamGroup, TokenSequence, Vocab,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("parameter mask is empty")]
    EmptyMask,
    #[error("mask requests {requested} top layers but the model has {available}")]
    MaskLayerRange { requested: usize, available: usize },
    #[error("mask key ({group}, {layer}) not present in the target parameters")]
    MaskKeyMissing { group: ParamGroup, layer: i32 },
    #[error("policy and reference models differ in shape or vocabulary")]
    ShapeMismatch,
    #[error("chosen and rejected responses are identical")]
    IdenticalPair,
    #[error("non-finite loss at step {step} (dpo={dpo}, sft={sft})")]
    NonFiniteLoss { step: usize, dpo: f64, sft: f64 },
    #[error("line {line}: {msg}")]
    ParseLine { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One preference triple: prompt, chosen response, rejected response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceExample {
    pub id: Option<String>,
    pub prompt: TokenSequence,
    pub chosen: TokenSequence,
    pub rejected: TokenSequence,
}

impl PreferenceExample {
    pub fn new(
        prompt: TokenSequence,
        chosen: TokenSequence,
        rejected: TokenSequence,
    ) -> Result<Self, AlignError> {
        if chosen.ids == rejected.ids {
            return Err(AlignError::IdenticalPair);
        }
        Ok(Self { id: None, prompt, chosen, rejected })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }
}

/// Which parameters the trainer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Key, query, and layer-norm parameters across all transformer layers.
    KqLn,
    /// Every tensor of the `n` highest layer indices.
    TopLayers(usize),
    /// All parameters trainable.
    None,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    /// Preference-loss temperature β.
    pub beta: f64,
    /// Weight `w` of the preference term; `1−w` goes to the SFT term.
    pub dpo_weight: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub mask_strategy: MaskStrategy,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            dpo_weight: 0.9,
            learning_rate: 0.5,
            epochs: 2,
            mask_strategy: MaskStrategy::KqLn,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if !(0.0..=1.0).contains(&self.dpo_weight) {
            return Err(AlignError::InvalidConfig(format!(
                "dpo_weight must be in [0,1], got {}",
                self.dpo_weight
            )));
        }
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(AlignError::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(AlignError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(AlignError::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Set of (group tag, layer index) keys designated trainable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMask {
    keys: BTreeSet<(ParamGroup, i32)>,
}

impl ParamMask {
    fn from_keys(
        keys: BTreeSet<(ParamGroup, i32)>,
        params: &ModelParams,
    ) -> Result<Self, AlignError> {
        if keys.is_empty() {
            return Err(AlignError::EmptyMask);
        }
        for &(group, layer) in &keys {
            if !params.keys().any(|k| k.group == group && k.layer == layer) {
                return Err(AlignError::MaskKeyMissing { group, layer });
            }
        }
        Ok(Self { keys })
    }

    pub fn contains(&self, group: ParamGroup, layer: i32) -> bool {
        self.keys.contains(&(group, layer))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(ParamGroup, i32)> {
        self.keys.iter()
    }
}

/// Attention key, attention query, and layer-norm groups of every
/// transformer layer. Tensors outside the per-layer blocks stay frozen.
pub fn build_mask_kqln(params: &ModelParams) -> Result<ParamMask, AlignError> {
    let mut keys = BTreeSet::new();
    for l in 0..params.cfg.n_layers as i32 {
        keys.insert((ParamGroup::AttentionKey, l));
        keys.insert((ParamGroup::AttentionQuery, l));
        keys.insert((ParamGroup::LayerNorm, l));
    }
    ParamMask::from_keys(keys, params)
}

/// Every group of the `n` highest layer indices.
pub fn build_mask_toplayers(params: &ModelParams, n: usize) -> Result<ParamMask, AlignError> {
    let layers = params.cfg.n_layers;
    if n > layers {
        return Err(AlignError::MaskLayerRange { requested: n, available: layers });
    }
    let mut keys = BTreeSet::new();
    for l in (layers - n) as i32..layers as i32 {
        for group in [
            ParamGroup::AttentionKey,
            ParamGroup::AttentionQuery,
            ParamGroup::AttentionValue,
            ParamGroup::AttentionOutput,
            ParamGroup::MlpIn,
            ParamGroup::MlpOut,
            ParamGroup::LayerNorm,
        ] {
            keys.insert((group, l));
        }
    }
    ParamMask::from_keys(keys, params)
}

/// Mask covering every (group, layer) key present in the model.
pub fn build_mask_all(params: &ModelParams) -> Result<ParamMask, AlignError> {
    let mut keys = BTreeSet::new();
    for k in params.keys() {
        keys.insert((k.group, k.layer));
    }
    ParamMask::from_keys(keys, params)
}

/// Resolves a [`MaskStrategy`] against concrete parameters.
pub fn mask_for_strategy(
    params: &ModelParams,
    strategy: MaskStrategy,
) -> Result<ParamMask, AlignError> {
    match strategy {
        MaskStrategy::KqLn => build_mask_kqln(params),
        MaskStrategy::TopLayers(n) => build_mask_toplayers(params, n),
        MaskStrategy::None => build_mask_all(params),
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Stable logistic sigmoid.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_shapes(policy: &ModelParams, reference: &ModelParams) -> Result<(), AlignError> {
    if !policy.same_shape(reference) {
        return Err(AlignError::ShapeMismatch);
    }
    Ok(())
}

/// β·(Δ_chosen − Δ_rejected) where Δ is the policy-minus-reference
/// log-probability advantage. Positive when the policy prefers the chosen
/// response relative to the reference.
pub fn implicit_reward_margin(
    policy: &ModelParams,
    reference: &ModelParams,
    vocab: &Vocab,
    ex: &PreferenceExample,
    beta: f64,
) -> Result<f64, AlignError> {
    check_shapes(policy, reference)?;
    let lpc = sequence_logprob(policy, vocab, &ex.prompt, &ex.chosen)?;
    let lpr = sequence_logprob(policy, vocab, &ex.prompt, &ex.rejected)?;
    let rpc = sequence_logprob(reference, vocab, &ex.prompt, &ex.chosen)?;
    let rpr = sequence_logprob(reference, vocab, &ex.prompt, &ex.rejected)?;
    Ok(beta * ((lpc - rpc) - (lpr - rpr)))
}

/// The preference loss `softplus(−margin)` and the margin itself.
pub fn dpo_loss(
    policy: &ModelParams,
    reference: &ModelParams,
    vocab: &Vocab,
    ex: &PreferenceExample,
    beta: f64,
) -> Result<(f64, f64), AlignError> {
    let margin = implicit_reward_margin(policy, reference, vocab, ex, beta)?;
    Ok((softplus(-margin), margin))
}

/// Negative log-likelihood of the chosen response under the policy.
pub fn sft_loss(
    policy: &ModelParams,
    vocab: &Vocab,
    ex: &PreferenceExample,
) -> Result<f64, AlignError> {
    Ok(-sequence_logprob(policy, vocab, &ex.prompt, &ex.chosen)?)
}

/// `w·L_dpo + (1−w)·L_sft`.
pub fn combined_loss(
    policy: &ModelParams,
    reference: &ModelParams,
    vocab: &Vocab,
    ex: &PreferenceExample,
    config: &AlignConfig,
) -> Result<f64, AlignError> {
    config.validate()?;
    let parts = loss_parts(policy, reference, vocab, ex, config.beta, config.dpo_weight, None)?;
    Ok(parts.combined)
}

/// All loss terms for one example in one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub dpo: f64,
    pub sft: f64,
    pub combined: f64,
    pub margin: f64,
}

pub(crate) fn loss_parts(
    policy: &ModelParams,
    reference: &ModelParams,
    vocab: &Vocab,
    ex: &PreferenceExample,
    beta: f64,
    w: f64,
    reference_logprobs: Option<(f64, f64)>,
) -> Result<LossParts, AlignError> {
    check_shapes(policy, reference)?;
    let lpc = sequence_logprob(policy, vocab, &ex.prompt, &ex.chosen)?;
    let lpr = sequence_logprob(policy, vocab, &ex.prompt, &ex.rejected)?;
    let (rpc, rpr) = match reference_logprobs {
        Some(pair) => pair,
        None => (
            sequence_logprob(reference, vocab, &ex.prompt, &ex.chosen)?,
            sequence_logprob(reference, vocab, &ex.prompt, &ex.rejected)?,
        ),
    };
    let margin = beta * ((lpc - rpc) - (lpr - rpr));
    let dpo = softplus(-margin);
    let sft = -lpc;
    Ok(LossParts { dpo, sft, combined: w * dpo + (1.0 - w) * sft, margin })
}

/// Loss terms and the exact gradient of the combined loss w.r.t. every
/// policy parameter. Reference log-probabilities may be supplied from a
/// cache since the reference is frozen.
pub fn combined_loss_and_grad(
    policy: &ModelParams,
    reference: &ModelParams,
    vocab: &Vocab,
    ex: &PreferenceExample,
    beta: f64,
    w: f64,
    reference_logprobs: Option<(f64, f64)>,
) -> Result<(LossParts, GradientSet), AlignError> {
    check_shapes(policy, reference)?;
    let (lpc, chosen_trace) = sequence_logprob_with_trace(policy, vocab, &ex.prompt, &ex.chosen)?;
    let (lpr, rejected_trace) =
        sequence_logprob_with_trace(policy, vocab, &ex.prompt, &ex.rejected)?;
    let (rpc, rpr) = match reference_logprobs {
        Some(pair) => pair,
        None => (
            sequence_logprob(reference, vocab, &ex.prompt, &ex.chosen)?,
            sequence_logprob(reference, vocab, &ex.prompt, &ex.rejected)?,
        ),
    };
    let margin = beta * ((lpc - rpc) - (lpr - rpr));
    let dpo = softplus(-margin);
    let sft = -lpc;
    let parts = LossParts { dpo, sft, combined: w * dpo + (1.0 - w) * sft, margin };

    // dL/d lpc = −w·β·σ(−m) − (1−w);  dL/d lpr = +w·β·σ(−m).
    let s = sigmoid(-margin);
    let d_lpc = -w * beta * s - (1.0 - w);
    let d_lpr = w * beta * s;
    let mut grads = sequence_logprob_backward(policy, &chosen_trace, d_lpc);
    if d_lpr != 0.0 {
        let g2 = sequence_logprob_backward(policy, &rejected_trace, d_lpr);
        grads.add_assign(&g2);
    }
    Ok((parts, grads))
}

/// Fraction of examples whose implicit reward margin is positive.
pub fn preference_accuracy(
    policy: &ModelParams,
    reference: &ModelParams,
    vocab: &Vocab,
    examples: &[PreferenceExample],
    beta: f64,
) -> Result<f64, AlignError> {
    if examples.is_empty() {
        return Err(AlignError::EmptyDataset);
    }
    let mut hits = 0usize;
    for ex in examples {
        if implicit_reward_margin(policy, reference, vocab, ex, beta)? > 0.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}
