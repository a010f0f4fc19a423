//! A minimal decoder-only autoregressive transformer in 64-bit floats.
//!
//! Serves as both the trainable policy and the frozen reference model.
//! Everything is exact and deterministic: forward passes cache the
//! activations needed for analytic gradients, and decoding breaks argmax
//! ties by lowest token id.

mod model;
mod params;
mod vocab;

pub use model::{
    decode, forward_logits, forward_trace, greedy_decode, logits_backward, sequence_logprob,
    sequence_logprob_backward, sequence_logprob_with_trace, DecodeStrategy, ForwardTrace,
    SequenceTrace,
};
pub use params::{
    load_checkpoint, save_checkpoint, Checkpoint, GradientSet, ModelConfig, ModelParams,
    ParamGroup, ParamKey, Tensor,
};
pub use vocab::{Role, TokenSequence, Vocab};

use thiserror::Error;

/// Errors raised by the model core.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of length {len} exceeds context length {context}")]
    SequenceTooLong { len: usize, context: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    InvalidTokenId { id: usize, vocab: usize },
    #[error("sequence log-probability requires at least one prompt token")]
    EmptyPrompt,
    #[error("response must contain at least one token")]
    EmptyResponse,
    #[error("token sequence has role {got:?}, expected {expected:?}")]
    RoleMismatch { expected: Role, got: Role },
    #[error("vocabulary must contain at least 4 tokens, got {0}")]
    VocabTooSmall(usize),
    #[error("duplicate token string {0:?} in vocabulary")]
    DuplicateToken(String),
    #[error("special token ids must be distinct and in range")]
    BadSpecialIds,
    #[error("character {0:?} is not in the vocabulary")]
    UnknownChar(char),
    #[error("model dimension {d_model} not divisible by head count {n_heads}")]
    BadHeadSplit { d_model: usize, n_heads: usize },
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
