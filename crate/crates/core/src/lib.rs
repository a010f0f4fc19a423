//! Preference alignment toolkit for speech-worthy text.
//!
//! The crate trains a small decoder-only transformer to prefer concise,
//! vocalizable responses over written-style ones, and ships the surrounding
//! pipeline: curation of preference pairs from scored rollouts, surface-form
//! metrics for spoken-register text, and an LLM-as-judge evaluation harness.
//!
//! Modules:
//! - [`tinylm`] — the toy autoregressive transformer (exact sequence
//!   log-probabilities, analytic gradients, greedy/temperature decoding).
//! - [`align`] — DPO and SFT losses, their weighted combination, parameter
//!   selection masks, and the deterministic training loop.
//! - [`prefdata`] — margin-based filtering of scored rollouts into
//!   chosen/rejected preference pairs.
//! - [`metrics`] — word count, dependency depth, and non-vocalizable
//!   character percentage, with corpus aggregation.
//! - [`judge`] — rubric-based 1–5 scoring of candidate responses through a
//!   chat-completions endpoint, plus the 0–100 speech-suitability scorer.
//! - [`corpus`] — synthetic style-transfer corpus generation and the toy
//!   end-to-end pipeline helpers used by the CLI and the demo.

pub mod align;
pub mod corpus;
pub mod judge;
pub mod metrics;
pub mod prefdata;
pub mod tinylm;
