//! Token space shared by the policy and reference models.
//!
//! The toolkit tokenizes at the character level: every distinct Unicode
//! scalar in the corpus is one token, plus the three special tokens. A
//! vocabulary file holds one token per line; the special strings `<bos>`,
//! `<eos>` and `<pad>` are recognized on load and prepended when absent.

use super::ModelError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;

pub const BOS_TEXT: &str = "<bos>";
pub const EOS_TEXT: &str = "<eos>";
pub const PAD_TEXT: &str = "<pad>";

/// Ordered set of distinct token strings with begin/end/padding specials.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    bos: usize,
    eos: usize,
    pad: usize,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from token strings and explicit special ids.
    pub fn new(tokens: Vec<String>, bos: usize, eos: usize, pad: usize) -> Result<Self, ModelError> {
        if tokens.len() < 4 {
            return Err(ModelError::VocabTooSmall(tokens.len()));
        }
        let n = tokens.len();
        if bos >= n || eos >= n || pad >= n || bos == eos || bos == pad || eos == pad {
            return Err(ModelError::BadSpecialIds);
        }
        let mut lookup = HashMap::with_capacity(n);
        for (i, t) in tokens.iter().enumerate() {
            if lookup.insert(t.clone(), i).is_some() {
                return Err(ModelError::DuplicateToken(t.clone()));
            }
        }
        Ok(Self { tokens, bos, eos, pad, lookup })
    }

    /// Character-level vocabulary over every distinct char in `texts`,
    /// sorted for determinism, with specials prepended.
    pub fn from_corpus<S: AsRef<str>>(texts: &[S]) -> Result<Self, ModelError> {
        let mut chars: Vec<char> = texts
            .iter()
            .flat_map(|t| t.as_ref().chars())
            .collect();
        chars.sort_unstable();
        chars.dedup();
        let mut tokens = vec![BOS_TEXT.to_string(), EOS_TEXT.to_string(), PAD_TEXT.to_string()];
        tokens.extend(chars.into_iter().map(|c| c.to_string()));
        if tokens.len() < 4 {
            // Corpus with no characters at all; keep the invariant explicit.
            return Err(ModelError::VocabTooSmall(tokens.len()));
        }
        Self::new(tokens, 0, 1, 2)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn bos(&self) -> usize {
        self.bos
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    /// Encodes raw text one character per token. Unknown characters error.
    pub fn encode_chars(&self, text: &str) -> Result<Vec<usize>, ModelError> {
        text.chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.lookup
                    .get(c.encode_utf8(&mut buf) as &str)
                    .copied()
                    .ok_or(ModelError::UnknownChar(c))
            })
            .collect()
    }

    /// `<bos>` followed by the characters of `text`.
    pub fn encode_prompt(&self, text: &str) -> Result<TokenSequence, ModelError> {
        let mut ids = vec![self.bos];
        ids.extend(self.encode_chars(text)?);
        Ok(TokenSequence { ids, role: Role::Prompt })
    }

    /// The characters of `text` followed by `<eos>`.
    pub fn encode_response(&self, text: &str) -> Result<TokenSequence, ModelError> {
        let mut ids = self.encode_chars(text)?;
        ids.push(self.eos);
        TokenSequence::response(ids)
    }

    /// Concatenates token strings, dropping the specials.
    pub fn decode_text(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id != self.bos && id != self.eos && id != self.pad)
            .filter_map(|&id| self.token(id))
            .collect()
    }

    /// Writes one token per line.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads one token per line. Missing special strings are prepended in
    /// the order `<bos>`, `<eos>`, `<pad>`.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let mut tokens: Vec<String> = Vec::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            tokens.push(line.to_string());
        }
        for special in [PAD_TEXT, EOS_TEXT, BOS_TEXT] {
            if !tokens.iter().any(|t| t == special) {
                tokens.insert(0, special.to_string());
            }
        }
        let bos = tokens.iter().position(|t| t == BOS_TEXT).expect("inserted above");
        let eos = tokens.iter().position(|t| t == EOS_TEXT).expect("inserted above");
        let pad = tokens.iter().position(|t| t == PAD_TEXT).expect("inserted above");
        Self::new(tokens, bos, eos, pad)
    }

    /// Checks every id against the vocabulary size.
    pub fn validate_ids(&self, ids: &[usize]) -> Result<(), ModelError> {
        let n = self.size();
        for &id in ids {
            if id >= n {
                return Err(ModelError::InvalidTokenId { id, vocab: n });
            }
        }
        Ok(())
    }
}

/// Whether a token sequence is conditioning context or scored output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Prompt,
    Response,
}

/// A run of token ids with its role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub role: Role,
}

impl TokenSequence {
    pub fn prompt(ids: Vec<usize>) -> Self {
        Self { ids, role: Role::Prompt }
    }

    /// Response sequences must be non-empty.
    pub fn response(ids: Vec<usize>) -> Result<Self, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyResponse);
        }
        Ok(Self { ids, role: Role::Response })
    }

    /// Decode output may legitimately be empty when `max_len` is zero.
    pub(crate) fn response_unchecked(ids: Vec<usize>) -> Self {
        Self { ids, role: Role::Response }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{:?}", self.role, self.ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_vocab() -> Vocab {
        Vocab::from_corpus(&["abc"]).unwrap()
    }

    #[test]
    fn corpus_vocab_is_sorted_and_deduped() {
        let v = Vocab::from_corpus(&["cba", "ab"]).unwrap();
        assert_eq!(v.tokens()[3..], ["a", "b", "c"]);
        assert_eq!(v.size(), 6);
        assert_eq!(v.bos(), 0);
        assert_eq!(v.eos(), 1);
        assert_eq!(v.pad(), 2);
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let err = Vocab::new(
            vec!["a".into(), "b".into(), "c".into(), "a".into()],
            0,
            1,
            2,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::DuplicateToken(_)));
    }

    #[test]
    fn special_ids_must_be_distinct_and_in_range() {
        let toks = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        assert!(matches!(
            Vocab::new(toks.clone(), 0, 0, 2),
            Err(ModelError::BadSpecialIds)
        ));
        assert!(matches!(
            Vocab::new(toks, 0, 1, 9),
            Err(ModelError::BadSpecialIds)
        ));
    }

    #[test]
    fn size_floor_enforced() {
        assert!(matches!(
            Vocab::new(vec!["a".into(), "b".into(), "c".into()], 0, 1, 2),
            Err(ModelError::VocabTooSmall(3))
        ));
    }

    #[test]
    fn encode_round_trip() {
        let v = toy_vocab();
        let p = v.encode_prompt("ab").unwrap();
        assert_eq!(p.ids[0], v.bos());
        assert_eq!(p.len(), 3);
        let r = v.encode_response("c").unwrap();
        assert_eq!(*r.ids.last().unwrap(), v.eos());
        assert_eq!(v.decode_text(&r.ids), "c");
    }

    #[test]
    fn unknown_char_errors() {
        let v = toy_vocab();
        assert!(matches!(
            v.encode_chars("z"),
            Err(ModelError::UnknownChar('z'))
        ));
    }

    #[test]
    fn empty_response_rejected() {
        assert!(matches!(
            TokenSequence::response(vec![]),
            Err(ModelError::EmptyResponse)
        ));
    }

    #[test]
    fn vocab_file_round_trip_and_missing_specials() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = toy_vocab();
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.tokens(), v.tokens());
        assert_eq!(loaded.bos(), v.bos());

        // A bare file without specials gets them prepended.
        std::fs::write(&path, "x\ny\n").unwrap();
        let bare = Vocab::load(&path).unwrap();
        assert_eq!(bare.size(), 5);
        assert_eq!(bare.token(bare.bos()).unwrap(), BOS_TEXT);
        assert!(bare.id_of("x").is_some());
    }
}
