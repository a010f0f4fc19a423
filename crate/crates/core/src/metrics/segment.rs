//! Morpheme-level token counting via greedy longest-match segmentation.
//!
//! The bundled segmenter walks the text left to right, taking the longest
//! dictionary entry at each position. Spans no entry covers fall back to
//! script-boundary splitting: a run of same-script characters is one token,
//! and punctuation-like characters stand alone. Whitespace separates tokens
//! and is never counted. An external morphological analyzer can be plugged
//! in through the [`Segmenter`] trait.

use super::MetricsError;
use std::collections::HashSet;
use std::path::Path;

/// Pluggable segmentation backend.
pub trait Segmenter {
    fn segment(&self, text: &str) -> Vec<String>;
}

/// Dictionary of surface forms for longest-match segmentation.
#[derive(Debug, Clone)]
pub struct SegmenterLexicon {
    entries: HashSet<String>,
    max_entry_chars: usize,
}

/// Script class used by the unknown-span fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Script {
    Hiragana,
    Katakana,
    Kanji,
    Latin,
    Digit,
    Other,
}

fn script_of(c: char) -> Script {
    match c as u32 {
        0x3040..=0x309F => Script::Hiragana,
        0x30A0..=0x30FF | 0x31F0..=0x31FF => Script::Katakana,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF => Script::Kanji,
        _ if c.is_ascii_alphabetic() => Script::Latin,
        0xFF21..=0xFF3A | 0xFF41..=0xFF5A => Script::Latin,
        _ if c.is_ascii_digit() => Script::Digit,
        0xFF10..=0xFF19 => Script::Digit,
        _ => Script::Other,
    }
}

impl SegmenterLexicon {
    /// Builds a lexicon from surface forms; entries must be non-empty and
    /// unique.
    pub fn new<S: AsRef<str>>(forms: &[S]) -> Result<Self, MetricsError> {
        let mut entries = HashSet::with_capacity(forms.len());
        let mut max_entry_chars = 0;
        for (i, form) in forms.iter().enumerate() {
            let form = form.as_ref();
            if form.is_empty() {
                return Err(MetricsError::EmptyLexiconEntry { index: i });
            }
            if form.chars().any(char::is_whitespace) {
                return Err(MetricsError::WhitespaceLexiconEntry(form.to_string()));
            }
            if !entries.insert(form.to_string()) {
                return Err(MetricsError::DuplicateLexiconEntry(form.to_string()));
            }
            max_entry_chars = max_entry_chars.max(form.chars().count());
        }
        Ok(Self { entries, max_entry_chars })
    }

    /// Loads one surface form per line; blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)?;
        let forms: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        Self::new(&forms)
    }

    /// The small Japanese lexicon shipped with the crate.
    pub fn bundled() -> Self {
        let text = include_str!("../../data/lexicon_ja.txt");
        let forms: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        Self::new(&forms).expect("bundled lexicon is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, form: &str) -> bool {
        self.entries.contains(form)
    }

    /// Length in chars of the longest entry starting at `pos`, if any.
    fn longest_match(&self, chars: &[char], pos: usize) -> Option<usize> {
        let limit = self.max_entry_chars.min(chars.len() - pos);
        let mut buf = String::new();
        let mut lengths: Vec<(usize, String)> = Vec::with_capacity(limit);
        for (k, &c) in chars[pos..pos + limit].iter().enumerate() {
            buf.push(c);
            lengths.push((k + 1, buf.clone()));
        }
        lengths
            .into_iter()
            .rev()
            .find(|(_, cand)| self.entries.contains(cand))
            .map(|(len, _)| len)
    }
}

impl Segmenter for SegmenterLexicon {
    fn segment(&self, text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            if let Some(len) = self.longest_match(&chars, i) {
                tokens.push(chars[i..i + len].iter().collect());
                i += len;
                continue;
            }
            // Unknown span: extend while the script class holds and no
            // dictionary entry takes over. Punctuation-like characters
            // (`Other`) stay single tokens.
            let script = script_of(chars[i]);
            let mut j = i + 1;
            if script != Script::Other {
                while j < chars.len()
                    && !chars[j].is_whitespace()
                    && script_of(chars[j]) == script
                    && self.longest_match(&chars, j).is_none()
                {
                    j += 1;
                }
            }
            tokens.push(chars[i..j].iter().collect());
            i = j;
        }
        tokens
    }
}

/// Number of morpheme-level tokens under greedy longest-match
/// segmentation; whitespace excluded, punctuation included.
pub fn word_count(text: &str, lexicon: &SegmenterLexicon) -> usize {
    lexicon.segment(text).len()
}

/// Token count under any segmentation backend.
pub fn word_count_with(text: &str, segmenter: &dyn Segmenter) -> usize {
    segmenter.segment(text).len()
}
