//! Surface-form speech-suitability metrics: word count, dependency depth,
//! and the percentage of non-vocalizable characters, with corpus-level
//! aggregation.

mod conllu;
mod segment;

pub use conllu::{
    dependency_depth, load_conllu, parse_conllu, ConlluDoc, DepNode, DependencyTree,
    DepthAggregation,
};
pub use segment::{word_count, word_count_with, Segmenter, SegmenterLexicon};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("lexicon entry {index} is empty")]
    EmptyLexiconEntry { index: usize },
    #[error("duplicate lexicon entry {0:?}")]
    DuplicateLexiconEntry(String),
    #[error("lexicon entry {0:?} contains whitespace")]
    WhitespaceLexiconEntry(String),
    #[error("dependency tree has no nodes")]
    EmptyTree,
    #[error("token ids must be contiguous from 1: expected {expected}, got {got}")]
    NonContiguousIds { expected: usize, got: usize },
    #[error("token {id} has head {head} outside the sentence")]
    BadHead { id: usize, head: usize },
    #[error("dependency tree has no root")]
    NoRoot,
    #[error("dependency tree has {count} roots, expected exactly one")]
    MultipleRoots { count: usize },
    #[error("cycle through token {id}")]
    Cycle { id: usize },
    #[error("conllu line {line}: {msg}")]
    Conllu { line: usize, msg: String },
    #[error("no parser sets supplied")]
    NoParserSets,
    #[error("parser set {0:?} has no sentences")]
    EmptyParserSet(String),
    #[error("parser set {label:?} has {docs} documents for {responses} responses")]
    MisalignedParses { label: String, docs: usize, responses: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Character classes a TTS system can verbalize naturally.
///
/// The default table covers hiragana, katakana (including the prolonged
/// sound mark), CJK ideographs, ASCII and fullwidth letters and digits, and
/// sentence punctuation (。、！？・「」『』 plus ASCII `. , ! ? '`).
/// Whitespace is excluded from the denominator entirely. Everything else —
/// markdown symbols, URL punctuation, brackets, math signs — counts as
/// non-vocalizable. The table is public and can be rebuilt with different
/// ranges.
#[derive(Debug, Clone)]
pub struct VocalizableTable {
    ranges: Vec<(u32, u32)>,
    extra: Vec<char>,
}

impl Default for VocalizableTable {
    fn default() -> Self {
        Self {
            ranges: vec![
                (0x3041, 0x309F), // hiragana + iteration/combining marks
                (0x30A0, 0x30FF), // katakana incl. ー and ・
                (0x31F0, 0x31FF), // katakana phonetic extensions
                (0x3400, 0x4DBF), // CJK extension A
                (0x4E00, 0x9FFF), // CJK unified ideographs
                ('0' as u32, '9' as u32),
                ('A' as u32, 'Z' as u32),
                ('a' as u32, 'z' as u32),
                (0xFF10, 0xFF19), // fullwidth digits
                (0xFF21, 0xFF3A), // fullwidth A-Z
                (0xFF41, 0xFF5A), // fullwidth a-z
            ],
            extra: vec![
                '。', '、', '！', '？', '「', '」', '『', '』', '.', ',', '!', '?', '\'',
            ],
        }
    }
}

impl VocalizableTable {
    /// A table from explicit inclusive codepoint ranges and single chars.
    pub fn new(ranges: Vec<(u32, u32)>, extra: Vec<char>) -> Self {
        Self { ranges, extra }
    }

    pub fn is_vocalizable(&self, c: char) -> bool {
        let cp = c as u32;
        self.ranges.iter().any(|&(lo, hi)| cp >= lo && cp <= hi) || self.extra.contains(&c)
    }
}

/// Percentage of non-vocalizable characters among non-whitespace
/// characters, under the default table. Empty or all-whitespace input is
/// 0 by convention.
pub fn nv_percent(text: &str) -> f64 {
    nv_percent_with(text, &VocalizableTable::default())
}

/// [`nv_percent`] under a custom character table.
pub fn nv_percent_with(text: &str, table: &VocalizableTable) -> f64 {
    let mut total = 0usize;
    let mut nv = 0usize;
    for c in text.chars() {
        if c.is_whitespace() {
            continue;
        }
        total += 1;
        if !table.is_vocalizable(c) {
            nv += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * nv as f64 / total as f64
    }
}

/// Surface metrics for one response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseReport {
    pub word_count: usize,
    pub nv_percent: f64,
    /// Absent when no parses were supplied or the response was empty.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dep_depth: Option<f64>,
}

/// Corpus aggregation: arithmetic means with the per-response breakdown
/// retained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusReport {
    pub per_response: Vec<ResponseReport>,
    pub mean_word_count: f64,
    pub mean_nv_percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_dep_depth: Option<f64>,
    /// Responses excluded from the depth mean (empty text or no parse).
    pub depth_skipped: usize,
}

/// One parser variant's output: one document of sentence trees per
/// response, aligned by index.
#[derive(Debug, Clone)]
pub struct ParserSet {
    pub label: String,
    pub docs: Vec<Vec<DependencyTree>>,
}

/// Computes all three metrics over a response corpus.
///
/// `parses` may be empty, in which case dependency depth is skipped.
/// Empty or whitespace-only responses contribute zero word count and NV%
/// and are excluded from the depth mean.
pub fn corpus_report(
    responses: &[String],
    parses: &[ParserSet],
    lexicon: &SegmenterLexicon,
    aggregation: DepthAggregation,
) -> Result<CorpusReport, MetricsError> {
    if responses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    for set in parses {
        if set.docs.len() != responses.len() {
            return Err(MetricsError::MisalignedParses {
                label: set.label.clone(),
                docs: set.docs.len(),
                responses: responses.len(),
            });
        }
    }
    let mut per_response = Vec::with_capacity(responses.len());
    let mut depth_skipped = 0usize;
    for (i, response) in responses.iter().enumerate() {
        let wc = word_count(response, lexicon);
        let nv = nv_percent(response);
        let is_blank = response.chars().all(char::is_whitespace);
        let dep_depth = if parses.is_empty() || is_blank {
            if !parses.is_empty() {
                depth_skipped += 1;
            }
            None
        } else {
            let sets: Vec<(String, Vec<DependencyTree>)> = parses
                .iter()
                .map(|p| (p.label.clone(), p.docs[i].clone()))
                .collect();
            if sets.iter().any(|(_, trees)| trees.is_empty()) {
                depth_skipped += 1;
                None
            } else {
                Some(dependency_depth(&sets, aggregation)?)
            }
        };
        per_response.push(ResponseReport { word_count: wc, nv_percent: nv, dep_depth });
    }

    let n = per_response.len() as f64;
    let mean_word_count = per_response.iter().map(|r| r.word_count as f64).sum::<f64>() / n;
    let mean_nv_percent = per_response.iter().map(|r| r.nv_percent).sum::<f64>() / n;
    let depths: Vec<f64> = per_response.iter().filter_map(|r| r.dep_depth).collect();
    let mean_dep_depth = if depths.is_empty() {
        None
    } else {
        Some(depths.iter().sum::<f64>() / depths.len() as f64)
    };
    Ok(CorpusReport {
        per_response,
        mean_word_count,
        mean_nv_percent,
        mean_dep_depth,
        depth_skipped,
    })
}
