//! LLM-as-judge harness: rubric-based 1–5 scoring of candidate responses
//! and the 0–100 speech-suitability scorer shared with pair curation.
//!
//! The judge model sits behind a chat-completions endpoint named by
//! configuration. Replies must carry the verdict as a bare integer inside
//! `<score>...</score>`; anything else triggers a retry, and an item that
//! exhausts its attempts is excluded from the mean but counted as a
//! failure.

mod client;

pub use client::{ChatClient, ChatMessage, ClientError, EndpointConfig};
#[cfg(feature = "http")]
pub use client::HttpChatClient;

use crate::prefdata::SuitabilityScorer;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// Bumped whenever the prompt wording changes; scores are comparable only
/// within one template version.
pub const PROMPT_TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("invalid rubric: {0}")]
    InvalidRubric(String),
    #[error("item {id:?}: deduction {deduction} leaves no achievable score in [1,5]")]
    InvalidDeduction { id: String, deduction: u32 },
    #[error("no candidate response for item {0:?}")]
    MissingCandidate(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("every item failed; no scores to aggregate")]
    NoSuccessfulItems,
    #[error("line {line}: {msg}")]
    ParseLine { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One level of the 1–5 scoring rubric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricLevel {
    pub score: u8,
    pub title: String,
    pub description: String,
}

/// Five ordered levels, scores 1 through 5 each present once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricSpec {
    levels: Vec<RubricLevel>,
}

impl RubricSpec {
    /// Validates and canonicalizes (levels stored in ascending score order).
    pub fn new(mut levels: Vec<RubricLevel>) -> Result<Self, JudgeError> {
        if levels.len() != 5 {
            return Err(JudgeError::InvalidRubric(format!(
                "expected 5 levels, got {}",
                levels.len()
            )));
        }
        levels.sort_by_key(|l| l.score);
        for (i, level) in levels.iter().enumerate() {
            if level.score as usize != i + 1 {
                return Err(JudgeError::InvalidRubric(
                    "scores 1..=5 must each appear exactly once".into(),
                ));
            }
            if level.description.trim().is_empty() {
                return Err(JudgeError::InvalidRubric(format!(
                    "level {} has an empty description",
                    level.score
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[RubricLevel] {
        &self.levels
    }
}

impl Default for RubricSpec {
    /// The bundled speech-worthiness rubric.
    fn default() -> Self {
        let mk = |score: u8, title: &str, description: &str| RubricLevel {
            score,
            title: title.to_string(),
            description: description.to_string(),
        };
        Self::new(vec![
            mk(
                1,
                "Fatal Failure",
                "The response contains fundamental factual errors, hallucinations, or \
                 completely fails to follow the instruction.",
            ),
            mk(
                2,
                "Low Quality",
                "The response contains partial errors, incoherent Japanese, or excessive \
                 safety refusals (e.g., declining to answer harmless queries).",
            ),
            mk(
                3,
                "Written Style",
                "The content is factually accurate, but the format is unsuitable for speech, \
                 containing markdown, bullet points, URLs, or visual references (e.g., \
                 \"as shown below\").",
            ),
            mk(
                4,
                "Spoken Style",
                "The response is accurate and composed in natural spoken Japanese. It is free \
                 of non-verbalizable artifacts and structurally ready for synthesis.",
            ),
            mk(
                5,
                "Auditory Ideal",
                "In addition to meeting the Score 4 criteria, the response is stellar in its \
                 listenability. It uses short sentences to reduce cognitive load and \
                 incorporates natural conversational markers to enhance the tone.",
            ),
        ])
        .expect("bundled rubric is valid")
    }
}

/// An item-specific evaluation aspect, expressed as points subtracted from
/// the maximum score of 5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub description: String,
    pub deduction: u32,
}

/// One benchmark entry: instruction, reference answer, deduction criteria.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub instruction: String,
    pub reference_response: String,
    #[serde(default)]
    pub criteria: Vec<Criterion>,
}

impl BenchmarkItem {
    /// Each deduction must leave an achievable score within [1,5].
    pub fn validate(&self) -> Result<(), JudgeError> {
        for c in &self.criteria {
            if c.deduction == 0 || c.deduction > 4 {
                return Err(JudgeError::InvalidDeduction {
                    id: self.id.clone(),
                    deduction: c.deduction,
                });
            }
        }
        Ok(())
    }
}

/// A successful judge verdict for one item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeScore {
    pub item_id: String,
    pub score: u8,
    pub raw: String,
    pub attempts: u32,
}

/// An item that exhausted its attempts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeFailure {
    pub item_id: String,
    pub attempts: u32,
    pub last_error: String,
}

/// Outcome per item, in benchmark order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ItemOutcome {
    Scored(JudgeScore),
    Failed(JudgeFailure),
}

/// Aggregated evaluation results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Exact arithmetic mean over successful items.
    pub mean_score: f64,
    pub per_item: Vec<ItemOutcome>,
    pub failure_count: usize,
}

impl EvalSummary {
    /// The reported value: mean rounded to two decimals.
    pub fn mean_2dp(&self) -> f64 {
        (self.mean_score * 100.0).round() / 100.0
    }
}

/// Renders the deterministic judge prompt: rubric levels in ascending
/// score order, the instruction, the reference, per-item deduction
/// criteria with the score floor, and the candidate.
pub fn build_prompt(item: &BenchmarkItem, candidate: &str, rubric: &RubricSpec) -> String {
    let mut out = String::new();
    out.push_str(
        "You are a strict evaluator of how well a response works as spoken audio.\n\
         Rate the candidate response on a scale of 1 to 5 using this rubric:\n\n",
    );
    for level in rubric.levels() {
        out.push_str(&format!(
            "Score {} — {}: {}\n",
            level.score, level.title, level.description
        ));
    }
    out.push_str(&format!("\nTask instruction:\n{}\n", item.instruction));
    out.push_str(&format!("\nReference response:\n{}\n", item.reference_response));
    if item.criteria.is_empty() {
        out.push_str("\nItem-specific criteria: none.\n");
    } else {
        out.push_str("\nItem-specific criteria (deduct the listed points from 5 when violated):\n");
        let mut total = 0u32;
        for c in &item.criteria {
            out.push_str(&format!("- {} (deduct {})\n", c.description, c.deduction));
            total += c.deduction;
        }
        let floor = std::cmp::max(1, 5i64 - total as i64);
        out.push_str(&format!(
            "Total listed deductions: {total}. Applying deductions must not take the score \
             below max(1, 5 - {total}) = {floor}.\n"
        ));
    }
    out.push_str(&format!("\nCandidate response:\n{candidate}\n"));
    out.push_str(
        "\nReply with a brief justification, then the final integer score wrapped exactly as \
         <score>N</score>.\n",
    );
    out.push_str(&format!("(judge prompt template {PROMPT_TEMPLATE_VERSION})\n"));
    out
}

/// Prompt for the 0–100 speech-suitability score, optionally with the
/// instruction as context.
pub fn build_suitability_prompt(candidate: &str, instruction: Option<&str>) -> String {
    let mut out = String::new();
    out.push_str(
        "You are rating how suitable a response is for being read aloud by a \
         text-to-speech system.\n\
         Consider conciseness, natural conversational phrasing, and the absence of \
         markdown, bullet points, URLs, or anything else that cannot be verbalized.\n",
    );
    if let Some(instruction) = instruction {
        out.push_str(&format!("\nInstruction the response answers:\n{instruction}\n"));
    }
    out.push_str(&format!("\nResponse to rate:\n{candidate}\n"));
    out.push_str(
        "\nReply with an integer score from 0 (unusable as speech) to 100 (ideal speech), \
         wrapped exactly as <score>N</score>.\n",
    );
    out.push_str(&format!("(suitability prompt template {PROMPT_TEMPLATE_VERSION})\n"));
    out
}

/// Extracts a bare integer in `[min, max]` from the first
/// `<score>...</score>` region. Anything else is a parse rejection.
pub fn parse_delimited_score(reply: &str, min: i64, max: i64) -> Result<i64, String> {
    let start = reply.find("<score>").ok_or("missing <score> delimiter")? + "<score>".len();
    let rest = &reply[start..];
    let end = rest.find("</score>").ok_or("missing </score> delimiter")?;
    let inner = rest[..end].trim();
    if inner.is_empty() || !inner.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("{inner:?} is not a bare integer"));
    }
    let value: i64 = inner.parse().map_err(|_| format!("{inner:?} out of integer range"))?;
    if value < min || value > max {
        return Err(format!("score {value} outside [{min}, {max}]"));
    }
    Ok(value)
}

fn ask_with_retries(
    client: &dyn ChatClient,
    prompt: &str,
    config: &EndpointConfig,
    min: i64,
    max: i64,
) -> Result<(i64, String, u32), (u32, String)> {
    let mut last_error = String::from("no attempts made");
    let attempts_allowed = config.max_attempts.max(1);
    for attempt in 1..=attempts_allowed {
        match client.complete(&[ChatMessage::user(prompt)], config.temperature) {
            Ok(reply) => match parse_delimited_score(&reply, min, max) {
                Ok(score) => return Ok((score, reply, attempt)),
                Err(e) => last_error = format!("parse failure: {e}"),
            },
            Err(e) => last_error = format!("request failure: {e}"),
        }
    }
    Err((attempts_allowed, last_error))
}

/// Scores one candidate against one benchmark item.
pub fn judge_one(
    item: &BenchmarkItem,
    candidate: &str,
    rubric: &RubricSpec,
    client: &dyn ChatClient,
    config: &EndpointConfig,
) -> Result<JudgeScore, JudgeFailure> {
    let prompt = build_prompt(item, candidate, rubric);
    match ask_with_retries(client, &prompt, config, 1, 5) {
        Ok((score, raw, attempts)) => Ok(JudgeScore {
            item_id: item.id.clone(),
            score: score as u8,
            raw,
            attempts,
        }),
        Err((attempts, last_error)) => Err(JudgeFailure {
            item_id: item.id.clone(),
            attempts,
            last_error,
        }),
    }
}

/// Speech-suitability score in [0, 100] for a bare candidate string.
pub fn speech_suitability_score(
    candidate: &str,
    client: &dyn ChatClient,
    config: &EndpointConfig,
) -> Result<f64, JudgeFailure> {
    suitability_with_context(candidate, None, client, config)
}

fn suitability_with_context(
    candidate: &str,
    instruction: Option<&str>,
    client: &dyn ChatClient,
    config: &EndpointConfig,
) -> Result<f64, JudgeFailure> {
    let prompt = build_suitability_prompt(candidate, instruction);
    match ask_with_retries(client, &prompt, config, 0, 100) {
        Ok((score, _, _)) => Ok(score as f64),
        Err((attempts, last_error)) => Err(JudgeFailure {
            item_id: String::new(),
            attempts,
            last_error,
        }),
    }
}

/// Adapter letting pair curation score rollouts through the judge
/// endpoint.
pub struct EndpointScorer<'a> {
    pub client: &'a dyn ChatClient,
    pub config: &'a EndpointConfig,
}

impl SuitabilityScorer for EndpointScorer<'_> {
    fn score_rollout(&self, instruction: &str, rollout: &str) -> Result<f64, String> {
        suitability_with_context(rollout, Some(instruction), self.client, self.config)
            .map_err(|f| f.last_error)
    }
}

/// Runs the whole benchmark with bounded concurrency and deterministic
/// aggregation. Failed items are excluded from the mean and counted.
pub fn evaluate_benchmark(
    items: &[BenchmarkItem],
    candidates: &HashMap<String, String>,
    rubric: &RubricSpec,
    client: &dyn ChatClient,
    config: &EndpointConfig,
) -> Result<EvalSummary, JudgeError> {
    let mut seen = HashSet::new();
    for item in items {
        item.validate()?;
        if !seen.insert(&item.id) {
            return Err(JudgeError::DuplicateId(item.id.clone()));
        }
        if !candidates.contains_key(&item.id) {
            return Err(JudgeError::MissingCandidate(item.id.clone()));
        }
    }

    let slots: Mutex<Vec<Option<ItemOutcome>>> = Mutex::new(vec![None; items.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = config.concurrency.max(1).min(items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let item = &items[i];
                let candidate = &candidates[&item.id];
                let outcome = match judge_one(item, candidate, rubric, client, config) {
                    Ok(score) => ItemOutcome::Scored(score),
                    Err(failure) => ItemOutcome::Failed(failure),
                };
                slots.lock().expect("no poisoned judges").get_mut(i).map(|s| *s = Some(outcome));
            });
        }
    });

    let per_item: Vec<ItemOutcome> = slots
        .into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|o| o.expect("every slot filled"))
        .collect();
    let scores: Vec<u8> = per_item
        .iter()
        .filter_map(|o| match o {
            ItemOutcome::Scored(s) => Some(s.score),
            ItemOutcome::Failed(_) => None,
        })
        .collect();
    let failure_count = per_item.len() - scores.len();
    if scores.is_empty() {
        return Err(JudgeError::NoSuccessfulItems);
    }
    let mean_score = scores.iter().map(|&s| s as f64).sum::<f64>() / scores.len() as f64;
    Ok(EvalSummary { mean_score, per_item, failure_count })
}

/// Reads benchmark items from JSONL, skipping `_meta` lines.
pub fn load_benchmark_jsonl(path: &Path) -> Result<Vec<BenchmarkItem>, JudgeError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| JudgeError::ParseLine { line: ln + 1, msg: e.to_string() })?;
        if value.get("_meta").is_some() {
            continue;
        }
        let item: BenchmarkItem = serde_json::from_value(value)
            .map_err(|e| JudgeError::ParseLine { line: ln + 1, msg: e.to_string() })?;
        item.validate()?;
        out.push(item);
    }
    Ok(out)
}

/// Candidate row: `{id, response}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRow {
    pub id: String,
    pub response: String,
}

/// Reads candidates keyed by item id; duplicate ids error.
pub fn load_candidates_jsonl(path: &Path) -> Result<HashMap<String, String>, JudgeError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| JudgeError::ParseLine { line: ln + 1, msg: e.to_string() })?;
        if value.get("_meta").is_some() {
            continue;
        }
        let row: CandidateRow = serde_json::from_value(value)
            .map_err(|e| JudgeError::ParseLine { line: ln + 1, msg: e.to_string() })?;
        if out.insert(row.id.clone(), row.response).is_some() {
            return Err(JudgeError::DuplicateId(row.id));
        }
    }
    Ok(out)
}

/// Writes per-item outcomes and the summary as JSONL.
pub fn save_summary_jsonl(
    path: &Path,
    summary: &EvalSummary,
    meta: Option<serde_json::Value>,
) -> Result<(), JudgeError> {
    let mut f = std::fs::File::create(path)?;
    if let Some(meta) = meta {
        writeln!(f, "{}", serde_json::json!({ "_meta": meta }))?;
    }
    for outcome in &summary.per_item {
        writeln!(f, "{}", serde_json::to_string(outcome).expect("serializable outcome"))?;
    }
    writeln!(
        f,
        "{}",
        serde_json::json!({
            "summary": {
                "mean_score": summary.mean_score,
                "mean_score_2dp": summary.mean_2dp(),
                "failure_count": summary.failure_count,
                "items": summary.per_item.len(),
            }
        })
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str) -> BenchmarkItem {
        BenchmarkItem {
            id: id.into(),
            instruction: "天気を教えてください。".into(),
            reference_response: "今日は晴れですよ。".into(),
            criteria: vec![Criterion { description: "箇条書きを使っている".into(), deduction: 2 }],
        }
    }

    /// Scripted stub: pops one reply per call, per prompt-matching key.
    struct ScriptedClient {
        replies: Mutex<Vec<Result<String, ()>>>,
    }

    impl ScriptedClient {
        fn new(replies: Vec<Result<&str, ()>>) -> Self {
            Self {
                replies: Mutex::new(
                    replies.into_iter().rev().map(|r| r.map(str::to_string)).collect(),
                ),
            }
        }
    }

    impl ChatClient for ScriptedClient {
        fn complete(&self, _: &[ChatMessage], _: f64) -> Result<String, ClientError> {
            match self.replies.lock().unwrap().pop() {
                Some(Ok(reply)) => Ok(reply),
                Some(Err(())) => Err(ClientError::Transport("connection refused".into())),
                None => Err(ClientError::Transport("script exhausted".into())),
            }
        }
    }

    #[test]
    fn default_rubric_is_five_ascending_levels() {
        let rubric = RubricSpec::default();
        let scores: Vec<u8> = rubric.levels().iter().map(|l| l.score).collect();
        assert_eq!(scores, vec![1, 2, 3, 4, 5]);
        assert_eq!(rubric.levels()[0].title, "Fatal Failure");
        assert_eq!(rubric.levels()[4].title, "Auditory Ideal");
    }

    #[test]
    fn rubric_rejects_bad_level_sets() {
        let lvl = |s: u8| RubricLevel { score: s, title: "t".into(), description: "d".into() };
        assert!(RubricSpec::new(vec![lvl(1), lvl(2), lvl(3), lvl(4)]).is_err());
        assert!(RubricSpec::new(vec![lvl(1), lvl(2), lvl(3), lvl(4), lvl(4)]).is_err());
    }

    #[test]
    fn prompt_is_deterministic_and_orders_levels() {
        let rubric = RubricSpec::default();
        let a = build_prompt(&item("x"), "候補です。", &rubric);
        let b = build_prompt(&item("x"), "候補です。", &rubric);
        assert_eq!(a, b);

        // Reordered level input renders identically after canonicalization.
        let mut levels = rubric.levels().to_vec();
        levels.reverse();
        let reordered = RubricSpec::new(levels).unwrap();
        let c = build_prompt(&item("x"), "候補です。", &reordered);
        assert_eq!(a, c);

        let s1 = a.find("Score 1").unwrap();
        let s5 = a.find("Score 5").unwrap();
        assert!(s1 < s5);
        assert!(a.contains(PROMPT_TEMPLATE_VERSION));
    }

    #[test]
    fn prompt_states_deduction_floor() {
        let mut it = item("x");
        it.criteria = vec![
            Criterion { description: "a".into(), deduction: 3 },
            Criterion { description: "b".into(), deduction: 3 },
        ];
        let prompt = build_prompt(&it, "c", &RubricSpec::default());
        assert!(prompt.contains("max(1, 5 - 6) = 1"));
    }

    #[test]
    fn deduction_validation() {
        let mut it = item("x");
        it.criteria = vec![Criterion { description: "a".into(), deduction: 5 }];
        assert!(matches!(it.validate(), Err(JudgeError::InvalidDeduction { .. })));
        it.criteria = vec![Criterion { description: "a".into(), deduction: 0 }];
        assert!(it.validate().is_err());
    }

    #[test]
    fn score_parser_accepts_only_bare_integers_in_range() {
        assert_eq!(parse_delimited_score("<score>4</score>", 1, 5), Ok(4));
        assert_eq!(parse_delimited_score("text <score> 3 </score> more", 1, 5), Ok(3));
        assert!(parse_delimited_score("<score>7</score>", 1, 5).is_err());
        assert!(parse_delimited_score("<score>4.5</score>", 1, 5).is_err());
        assert!(parse_delimited_score("<score>four</score>", 1, 5).is_err());
        assert!(parse_delimited_score("<score>-1</score>", 1, 5).is_err());
        assert!(parse_delimited_score("<score></score>", 1, 5).is_err());
        assert!(parse_delimited_score("4", 1, 5).is_err());
        assert!(parse_delimited_score("<score>4", 1, 5).is_err());
        // First delimiter wins.
        assert_eq!(parse_delimited_score("<score>2</score><score>5</score>", 1, 5), Ok(2));
    }

    fn config() -> EndpointConfig {
        EndpointConfig::default()
    }

    #[test]
    fn judge_one_scores_on_first_try() {
        let client = ScriptedClient::new(vec![Ok("I rate this <score>4</score>")]);
        let s = judge_one(&item("a"), "c", &RubricSpec::default(), &client, &config()).unwrap();
        assert_eq!(s.score, 4);
        assert_eq!(s.attempts, 1);
    }

    #[test]
    fn judge_one_retries_on_garbage_then_succeeds() {
        let client = ScriptedClient::new(vec![Ok("no score here"), Ok("<score>2</score>")]);
        let s = judge_one(&item("a"), "c", &RubricSpec::default(), &client, &config()).unwrap();
        assert_eq!(s.score, 2);
        assert_eq!(s.attempts, 2);
    }

    #[test]
    fn judge_one_fails_after_out_of_range_replies() {
        let client = ScriptedClient::new(vec![
            Ok("<score>7</score>"),
            Ok("<score>7</score>"),
            Ok("<score>7</score>"),
        ]);
        let failure =
            judge_one(&item("a"), "c", &RubricSpec::default(), &client, &config()).unwrap_err();
        assert_eq!(failure.attempts, 3);
        assert!(failure.last_error.contains("outside"));
    }

    #[test]
    fn transport_errors_also_consume_attempts() {
        let client = ScriptedClient::new(vec![Err(()), Ok("<score>5</score>")]);
        let s = judge_one(&item("a"), "c", &RubricSpec::default(), &client, &config()).unwrap();
        assert_eq!(s.attempts, 2);
    }

    struct ByCandidate;

    impl ChatClient for ByCandidate {
        fn complete(&self, messages: &[ChatMessage], _: f64) -> Result<String, ClientError> {
            let prompt = &messages[0].content;
            for (needle, score) in [("cand-a", 3), ("cand-b", 4), ("cand-c", 5)] {
                if prompt.contains(needle) {
                    return Ok(format!("<score>{score}</score>"));
                }
            }
            Err(ClientError::Transport("unknown candidate".into()))
        }
    }

    #[test]
    fn evaluate_benchmark_means_and_failures() {
        let items: Vec<BenchmarkItem> = ["a", "b", "c", "d"].iter().map(|i| item(i)).collect();
        let candidates: HashMap<String, String> = [
            ("a", "cand-a"),
            ("b", "cand-b"),
            ("c", "cand-c"),
            ("d", "cand-unknown"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let summary = evaluate_benchmark(
            &items,
            &candidates,
            &RubricSpec::default(),
            &ByCandidate,
            &config(),
        )
        .unwrap();
        assert_eq!(summary.failure_count, 1);
        assert_eq!(summary.mean_2dp(), 4.00);
        assert_eq!(summary.per_item.len(), 4);
        assert!(matches!(summary.per_item[3], ItemOutcome::Failed(_)));
    }

    #[test]
    fn evaluate_benchmark_mean_is_permutation_invariant() {
        let mut items: Vec<BenchmarkItem> = ["a", "b", "c"].iter().map(|i| item(i)).collect();
        let candidates: HashMap<String, String> =
            [("a", "cand-a"), ("b", "cand-b"), ("c", "cand-c")]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
        let rubric = RubricSpec::default();
        let m1 = evaluate_benchmark(&items, &candidates, &rubric, &ByCandidate, &config())
            .unwrap()
            .mean_score;
        items.reverse();
        let m2 = evaluate_benchmark(&items, &candidates, &rubric, &ByCandidate, &config())
            .unwrap()
            .mean_score;
        assert_eq!(m1.to_bits(), m2.to_bits());
    }

    #[test]
    fn evaluate_benchmark_requires_candidates_and_distinct_ids() {
        let items = vec![item("a")];
        let empty = HashMap::new();
        assert!(matches!(
            evaluate_benchmark(&items, &empty, &RubricSpec::default(), &ByCandidate, &config()),
            Err(JudgeError::MissingCandidate(_))
        ));
        let dup = vec![item("a"), item("a")];
        let candidates: HashMap<String, String> =
            [("a".to_string(), "cand-a".to_string())].into_iter().collect();
        assert!(matches!(
            evaluate_benchmark(&dup, &candidates, &RubricSpec::default(), &ByCandidate, &config()),
            Err(JudgeError::DuplicateId(_))
        ));
    }

    #[test]
    fn all_failures_is_an_error() {
        struct AlwaysGarbage;
        impl ChatClient for AlwaysGarbage {
            fn complete(&self, _: &[ChatMessage], _: f64) -> Result<String, ClientError> {
                Ok("no delimiter".into())
            }
        }
        let items = vec![item("a")];
        let candidates: HashMap<String, String> =
            [("a".to_string(), "x".to_string())].into_iter().collect();
        assert!(matches!(
            evaluate_benchmark(
                &items,
                &candidates,
                &RubricSpec::default(),
                &AlwaysGarbage,
                &config()
            ),
            Err(JudgeError::NoSuccessfulItems)
        ));
    }

    #[test]
    fn suitability_score_range_and_parsing() {
        let client = ScriptedClient::new(vec![Ok("<score>95</score>")]);
        assert_eq!(speech_suitability_score("x", &client, &config()).unwrap(), 95.0);
        let zero = ScriptedClient::new(vec![Ok("<score>0</score>")]);
        assert_eq!(speech_suitability_score("x", &zero, &config()).unwrap(), 0.0);
        let over = ScriptedClient::new(vec![
            Ok("<score>101</score>"),
            Ok("<score>101</score>"),
            Ok("<score>101</score>"),
        ]);
        assert!(speech_suitability_score("x", &over, &config()).is_err());
    }

    #[test]
    fn endpoint_scorer_feeds_pair_curation() {
        use crate::prefdata::SuitabilityScorer;
        struct SixtyOrNinety;
        impl ChatClient for SixtyOrNinety {
            fn complete(&self, messages: &[ChatMessage], _: f64) -> Result<String, ClientError> {
                if messages[0].content.contains("short") {
                    Ok("<score>95</score>".into())
                } else {
                    Ok("<score>40</score>".into())
                }
            }
        }
        let cfg = config();
        let scorer = EndpointScorer { client: &SixtyOrNinety, config: &cfg };
        assert_eq!(scorer.score_rollout("inst", "a short reply").unwrap(), 95.0);
        assert_eq!(scorer.score_rollout("inst", "a verbose markdown reply").unwrap(), 40.0);
    }

    #[test]
    fn benchmark_and_candidate_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bpath = dir.path().join("bench.jsonl");
        let cpath = dir.path().join("cand.jsonl");
        let items = vec![item("a"), item("b")];
        let mut f = std::fs::File::create(&bpath).unwrap();
        writeln!(f, "{}", serde_json::json!({"_meta": {"v": 1}})).unwrap();
        for it in &items {
            writeln!(f, "{}", serde_json::to_string(it).unwrap()).unwrap();
        }
        let loaded = load_benchmark_jsonl(&bpath).unwrap();
        assert_eq!(loaded, items);

        std::fs::write(&cpath, "{\"id\":\"a\",\"response\":\"r1\"}\n{\"id\":\"b\",\"response\":\"r2\"}\n")
            .unwrap();
        let cands = load_candidates_jsonl(&cpath).unwrap();
        assert_eq!(cands["a"], "r1");
        assert_eq!(cands.len(), 2);

        std::fs::write(&cpath, "{\"id\":\"a\",\"response\":\"r1\"}\n{\"id\":\"a\",\"response\":\"r2\"}\n")
            .unwrap();
        assert!(matches!(load_candidates_jsonl(&cpath), Err(JudgeError::DuplicateId(_))));
    }
}
