//! Margin-based curation of scored rollouts into preference pairs.
//!
//! Per instruction: drop the whole group when no rollout reaches the score
//! threshold; otherwise the highest-scoring rollout is chosen and the
//! lowest-scoring rollout whose score, scaled by the margin factor, stays
//! strictly below the chosen score becomes rejected. No qualifying rollout
//! means no pair for that instruction.

use crate::align::RawPreferenceExample;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrefDataError {
    #[error("instruction {0:?} has no rollouts")]
    EmptyGroup(String),
    #[error("rollout for instruction {id:?} has score {score} outside [0,100]")]
    ScoreOutOfRange { id: String, score: f64 },
    #[error("rollout for instruction {0:?} has empty text")]
    EmptyText(String),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {msg}")]
    ParseLine { line: usize, msg: String },
    #[error("rollout {index} of instruction {id:?} is missing a score; run the scorer first")]
    MissingScore { id: String, index: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One scored rollout for an instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub instruction_id: String,
    pub text: String,
    /// Speech-suitability score in [0, 100].
    pub score: f64,
}

impl RolloutRecord {
    fn validate(&self) -> Result<(), PrefDataError> {
        if self.text.is_empty() {
            return Err(PrefDataError::EmptyText(self.instruction_id.clone()));
        }
        if !(0.0..=100.0).contains(&self.score) || !self.score.is_finite() {
            return Err(PrefDataError::ScoreOutOfRange {
                id: self.instruction_id.clone(),
                score: self.score,
            });
        }
        Ok(())
    }
}

/// All rollouts sampled for one instruction, in sampling order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub instruction_id: String,
    pub instruction: String,
    pub rollouts: Vec<RolloutRecord>,
}

/// Thresholds of the margin filter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Groups whose best rollout scores below this are discarded.
    pub min_max_score: f64,
    /// A rejected candidate must satisfy `score × margin_factor < chosen`.
    pub margin_factor: f64,
    /// Emit one pair per qualifying rejected rollout instead of only the
    /// widest-gap pair.
    #[serde(default)]
    pub all_qualifying: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_max_score: 90.0, margin_factor: 1.5, all_qualifying: false }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), PrefDataError> {
        if !(0.0..=100.0).contains(&self.min_max_score) {
            return Err(PrefDataError::InvalidConfig(format!(
                "min_max_score must be in [0,100], got {}",
                self.min_max_score
            )));
        }
        if self.margin_factor <= 1.0 || !self.margin_factor.is_finite() {
            return Err(PrefDataError::InvalidConfig(format!(
                "margin_factor must exceed 1, got {}",
                self.margin_factor
            )));
        }
        Ok(())
    }
}

/// A selected chosen/rejected pair for one instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedPair {
    pub instruction_id: String,
    pub instruction: String,
    pub chosen: RolloutRecord,
    pub rejected: RolloutRecord,
}

/// Why an instruction produced no pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    MaxBelowThreshold,
    NoQualifyingRejected,
}

/// Curation output: pairs in input group order plus a discard histogram.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub pairs: Vec<CuratedPair>,
    pub discards: BTreeMap<DiscardReason, usize>,
    pub groups_in: usize,
}

/// Applies the margin filter to every group, deterministically and in
/// input order. Chosen ties break to the first maximal rollout; rejected
/// ties break to the first minimal qualifying rollout.
pub fn select_pairs(
    groups: &[RolloutGroup],
    cfg: &FilterConfig,
) -> Result<SelectionOutcome, PrefDataError> {
    cfg.validate()?;
    let mut outcome = SelectionOutcome { groups_in: groups.len(), ..Default::default() };
    for group in groups {
        if group.rollouts.is_empty() {
            return Err(PrefDataError::EmptyGroup(group.instruction_id.clone()));
        }
        for r in &group.rollouts {
            r.validate()?;
        }
        let chosen = group
            .rollouts
            .iter()
            .reduce(|best, r| if r.score > best.score { r } else { best })
            .expect("non-empty group");
        if chosen.score < cfg.min_max_score {
            *outcome.discards.entry(DiscardReason::MaxBelowThreshold).or_insert(0) += 1;
            continue;
        }
        let qualifies = |r: &RolloutRecord| r.score * cfg.margin_factor < chosen.score;
        if cfg.all_qualifying {
            let mut any = false;
            for r in group.rollouts.iter().filter(|r| qualifies(r)) {
                outcome.pairs.push(CuratedPair {
                    instruction_id: group.instruction_id.clone(),
                    instruction: group.instruction.clone(),
                    chosen: chosen.clone(),
                    rejected: r.clone(),
                });
                any = true;
            }
            if !any {
                *outcome.discards.entry(DiscardReason::NoQualifyingRejected).or_insert(0) += 1;
            }
        } else {
            let rejected = group
                .rollouts
                .iter()
                .filter(|r| qualifies(r))
                .reduce(|worst, r| if r.score < worst.score { r } else { worst });
            match rejected {
                Some(rej) => outcome.pairs.push(CuratedPair {
                    instruction_id: group.instruction_id.clone(),
                    instruction: group.instruction.clone(),
                    chosen: chosen.clone(),
                    rejected: rej.clone(),
                }),
                None => {
                    *outcome.discards.entry(DiscardReason::NoQualifyingRejected).or_insert(0) += 1;
                }
            }
        }
    }
    // Every emitted pair must satisfy both inequalities by construction.
    for pair in &outcome.pairs {
        debug_assert!(pair.chosen.score >= cfg.min_max_score);
        debug_assert!(pair.rejected.score * cfg.margin_factor < pair.chosen.score);
    }
    Ok(outcome)
}

/// Scoring backend for unscored rollouts; implemented by the judge module
/// and by test stubs. Per-request retry is the scorer's responsibility.
pub trait SuitabilityScorer: Sync {
    /// Returns a speech-suitability score in [0, 100].
    fn score_rollout(&self, instruction: &str, rollout: &str) -> Result<f64, String>;
}

/// A rollout the scorer could not score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub instruction_id: String,
    pub rollout_index: usize,
    pub error: String,
}

/// Scored groups plus per-rollout failures (failures are not globally
/// fatal; the affected rollouts are simply excluded).
#[derive(Debug, Clone)]
pub struct ScoredRollouts {
    pub groups: Vec<RolloutGroup>,
    pub failures: Vec<ScoreFailure>,
}

/// Raw unscored rollout text as it appears in input files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRollout {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Input file schema: one instruction per line with its rollouts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRolloutGroup {
    pub instruction_id: String,
    pub instruction: String,
    pub rollouts: Vec<RawRollout>,
}

/// Scores every rollout that lacks a score, issuing up to `concurrency`
/// requests in flight. Failures are recorded per-rollout and the affected
/// rollout is dropped from its group; output order is deterministic.
pub fn score_rollouts(
    groups: &[RawRolloutGroup],
    scorer: &dyn SuitabilityScorer,
    concurrency: usize,
) -> ScoredRollouts {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let tasks: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| (0..group.rollouts.len()).map(move |r| (g, r)))
        .collect();
    let results: Mutex<Vec<Option<Result<f64, String>>>> = Mutex::new(vec![None; tasks.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = concurrency.max(1).min(tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let t = cursor.fetch_add(1, Ordering::SeqCst);
                if t >= tasks.len() {
                    break;
                }
                let (g, r) = tasks[t];
                let rollout = &groups[g].rollouts[r];
                let outcome = match rollout.score {
                    Some(s) => Ok(s),
                    None => scorer.score_rollout(&groups[g].instruction, &rollout.text),
                };
                results.lock().expect("scorer threads healthy")[t] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().expect("threads joined");

    let mut out: Vec<RolloutGroup> = groups
        .iter()
        .map(|g| RolloutGroup {
            instruction_id: g.instruction_id.clone(),
            instruction: g.instruction.clone(),
            rollouts: Vec::with_capacity(g.rollouts.len()),
        })
        .collect();
    let mut failures = Vec::new();
    for (t, outcome) in results.into_iter().enumerate() {
        let (g, r) = tasks[t];
        match outcome.expect("every task ran") {
            Ok(score) => out[g].rollouts.push(RolloutRecord {
                instruction_id: groups[g].instruction_id.clone(),
                text: groups[g].rollouts[r].text.clone(),
                score,
            }),
            Err(error) => failures.push(ScoreFailure {
                instruction_id: groups[g].instruction_id.clone(),
                rollout_index: r,
                error,
            }),
        }
    }
    ScoredRollouts { groups: out, failures }
}

/// Converts already-scored raw groups, erroring on any missing score.
pub fn groups_from_raw(groups: &[RawRolloutGroup]) -> Result<Vec<RolloutGroup>, PrefDataError> {
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let mut records = Vec::with_capacity(g.rollouts.len());
        for (i, r) in g.rollouts.iter().enumerate() {
            let score = r.score.ok_or(PrefDataError::MissingScore {
                id: g.instruction_id.clone(),
                index: i,
            })?;
            records.push(RolloutRecord {
                instruction_id: g.instruction_id.clone(),
                text: r.text.clone(),
                score,
            });
        }
        out.push(RolloutGroup {
            instruction_id: g.instruction_id.clone(),
            instruction: g.instruction.clone(),
            rollouts: records,
        });
    }
    Ok(out)
}

/// Reads rollout groups from JSONL, skipping `_meta` lines.
pub fn load_rollout_jsonl(path: &Path) -> Result<Vec<RawRolloutGroup>, PrefDataError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| PrefDataError::ParseLine { line: ln + 1, msg: e.to_string() })?;
        if value.get("_meta").is_some() {
            continue;
        }
        let group: RawRolloutGroup = serde_json::from_value(value)
            .map_err(|e| PrefDataError::ParseLine { line: ln + 1, msg: e.to_string() })?;
        out.push(group);
    }
    Ok(out)
}

/// Writes scored groups back out as JSONL.
pub fn save_rollout_jsonl(
    path: &Path,
    groups: &[RolloutGroup],
    meta: Option<serde_json::Value>,
) -> Result<(), PrefDataError> {
    let mut f = std::fs::File::create(path)?;
    if let Some(meta) = meta {
        writeln!(f, "{}", serde_json::json!({ "_meta": meta }))?;
    }
    for g in groups {
        let raw = RawRolloutGroup {
            instruction_id: g.instruction_id.clone(),
            instruction: g.instruction.clone(),
            rollouts: g
                .rollouts
                .iter()
                .map(|r| RawRollout { text: r.text.clone(), score: Some(r.score) })
                .collect(),
        };
        writeln!(f, "{}", serde_json::to_string(&raw).expect("serializable group"))?;
    }
    Ok(())
}

/// Pairs in the preference-dataset schema consumed by the trainer:
/// the instruction text is the prompt.
pub fn pairs_to_preference_rows(pairs: &[CuratedPair]) -> Vec<RawPreferenceExample> {
    pairs
        .iter()
        .map(|p| RawPreferenceExample {
            id: Some(p.instruction_id.clone()),
            prompt: p.instruction.clone(),
            chosen: p.chosen.text.clone(),
            rejected: p.rejected.text.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(id: &str, scores: &[f64]) -> RolloutGroup {
        RolloutGroup {
            instruction_id: id.to_string(),
            instruction: format!("instruction {id}"),
            rollouts: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| RolloutRecord {
                    instruction_id: id.to_string(),
                    text: format!("rollout {i}"),
                    score: s,
                })
                .collect(),
        }
    }

    #[test]
    fn widest_gap_rejected_is_selected() {
        // Chosen 95; 60×1.5=90<95 qualifies, 70×1.5=105 does not.
        let out = select_pairs(&[group("a", &[95.0, 60.0, 70.0])], &FilterConfig::default()).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].chosen.score, 95.0);
        assert_eq!(out.pairs[0].rejected.score, 60.0);
    }

    #[test]
    fn group_below_threshold_is_discarded() {
        let out = select_pairs(&[group("a", &[89.0, 50.0])], &FilterConfig::default()).unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!(out.discards[&DiscardReason::MaxBelowThreshold], 1);
    }

    #[test]
    fn margin_boundary_is_strict() {
        // 60 × 1.5 = 90 exactly, which is not < 90: no pair.
        let out = select_pairs(&[group("a", &[90.0, 60.0])], &FilterConfig::default()).unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!(out.discards[&DiscardReason::NoQualifyingRejected], 1);
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let out = select_pairs(&[group("a", &[90.0, 30.0])], &FilterConfig::default()).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].rejected.score, 30.0);
    }

    #[test]
    fn chosen_tie_breaks_to_first_in_input_order() {
        let out = select_pairs(&[group("a", &[95.0, 95.0, 10.0])], &FilterConfig::default()).unwrap();
        assert_eq!(out.pairs[0].chosen.text, "rollout 0");
    }

    #[test]
    fn all_qualifying_flag_emits_one_pair_per_rejected() {
        let cfg = FilterConfig { all_qualifying: true, ..FilterConfig::default() };
        let out = select_pairs(&[group("a", &[99.0, 10.0, 20.0, 80.0])], &cfg).unwrap();
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[0].rejected.score, 10.0);
        assert_eq!(out.pairs[1].rejected.score, 20.0);
    }

    #[test]
    fn empty_group_and_bad_scores_error() {
        let empty = RolloutGroup {
            instruction_id: "e".into(),
            instruction: "i".into(),
            rollouts: vec![],
        };
        assert!(matches!(
            select_pairs(&[empty], &FilterConfig::default()),
            Err(PrefDataError::EmptyGroup(_))
        ));
        assert!(matches!(
            select_pairs(&[group("a", &[120.0])], &FilterConfig::default()),
            Err(PrefDataError::ScoreOutOfRange { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig { min_max_score: 101.0, ..Default::default() }.validate().is_err());
        assert!(FilterConfig { margin_factor: 1.0, ..Default::default() }.validate().is_err());
        assert!(FilterConfig::default().validate().is_ok());
    }

    struct FixtureScorer;

    impl SuitabilityScorer for FixtureScorer {
        fn score_rollout(&self, _instruction: &str, rollout: &str) -> Result<f64, String> {
            match rollout {
                "good" => Ok(95.0),
                "bad" => Ok(40.0),
                "broken" => Err("scorer unavailable".into()),
                _ => Ok(50.0),
            }
        }
    }

    fn raw_group(id: &str, texts: &[&str]) -> RawRolloutGroup {
        RawRolloutGroup {
            instruction_id: id.into(),
            instruction: format!("instruction {id}"),
            rollouts: texts.iter().map(|t| RawRollout { text: t.to_string(), score: None }).collect(),
        }
    }

    #[test]
    fn constant_stub_scores_lead_to_total_discard() {
        struct Constant;
        impl SuitabilityScorer for Constant {
            fn score_rollout(&self, _: &str, _: &str) -> Result<f64, String> {
                Ok(50.0)
            }
        }
        let scored = score_rollouts(&[raw_group("a", &["x", "y"])], &Constant, 2);
        assert!(scored.failures.is_empty());
        assert!(scored.groups[0].rollouts.iter().all(|r| r.score == 50.0));
        let out = select_pairs(&scored.groups, &FilterConfig::default()).unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!(out.discards[&DiscardReason::MaxBelowThreshold], 1);
    }

    #[test]
    fn fixture_scorer_scores_match_and_failures_are_recorded() {
        let scored = score_rollouts(&[raw_group("a", &["good", "broken", "bad"])], &FixtureScorer, 4);
        assert_eq!(scored.failures.len(), 1);
        assert_eq!(scored.failures[0].rollout_index, 1);
        let g = &scored.groups[0];
        assert_eq!(g.rollouts.len(), 2);
        assert_eq!(g.rollouts[0].score, 95.0);
        assert_eq!(g.rollouts[1].score, 40.0);
    }

    #[test]
    fn rollout_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rollouts.jsonl");
        let scored = score_rollouts(&[raw_group("a", &["good", "bad"])], &FixtureScorer, 1);
        save_rollout_jsonl(&path, &scored.groups, Some(serde_json::json!({"v": 1}))).unwrap();
        let loaded = load_rollout_jsonl(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].rollouts[0].score, Some(95.0));
        let groups = groups_from_raw(&loaded).unwrap();
        assert_eq!(groups[0].rollouts[1].score, 40.0);
    }

    #[test]
    fn missing_score_is_an_error_for_direct_conversion() {
        let raw = raw_group("a", &["x"]);
        assert!(matches!(
            groups_from_raw(&[raw]),
            Err(PrefDataError::MissingScore { .. })
        ));
    }
}
