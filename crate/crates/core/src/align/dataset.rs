//! Preference dataset files: JSONL with `prompt`, `chosen`, `rejected`
//! text fields and an optional `id`. Text is tokenized on load. Lines whose
//! object carries a `_meta` key are tool metadata and are skipped.

use super::{AlignError, PreferenceExample};
use crate::tinylm::Vocab;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Raw text form of one preference example.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RawPreferenceExample {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// Encodes prompt (with begin-of-sequence) and responses (with
/// end-of-sequence) at the character level.
pub fn tokenize_pair(raw: &RawPreferenceExample, vocab: &Vocab) -> Result<PreferenceExample, AlignError> {
    let ex = PreferenceExample::new(
        vocab.encode_prompt(&raw.prompt)?,
        vocab.encode_response(&raw.chosen)?,
        vocab.encode_response(&raw.rejected)?,
    )?;
    Ok(match &raw.id {
        Some(id) => ex.with_id(id.clone()),
        None => ex,
    })
}

/// Reads raw examples, skipping `_meta` lines and empty lines.
pub fn load_preference_jsonl(path: &Path) -> Result<Vec<RawPreferenceExample>, AlignError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| AlignError::ParseLine { line: ln + 1, msg: e.to_string() })?;
        if value.get("_meta").is_some() {
            continue;
        }
        let raw: RawPreferenceExample = serde_json::from_value(value)
            .map_err(|e| AlignError::ParseLine { line: ln + 1, msg: e.to_string() })?;
        out.push(raw);
    }
    Ok(out)
}

/// Writes examples one JSON object per line, with an optional leading
/// metadata line.
pub fn save_preference_jsonl(
    path: &Path,
    examples: &[RawPreferenceExample],
    meta: Option<serde_json::Value>,
) -> Result<(), AlignError> {
    let mut f = std::fs::File::create(path)?;
    if let Some(meta) = meta {
        writeln!(f, "{}", serde_json::json!({ "_meta": meta }))?;
    }
    for ex in examples {
        writeln!(f, "{}", serde_json::to_string(ex).expect("serializable example"))?;
    }
    Ok(())
}
