use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Prefix marking a word-continuation piece, WordPiece style.
pub const CONTINUATION: &str = "##";

/// Ids of the control tokens every backend vocabulary carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

/// Bidirectional token/id map with a greedy longest-match subword tokenizer.
///
/// Lookups are uncased except for bracketed special tokens such as `[E1]`,
/// which must match exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    special: SpecialIds,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

fn is_special(token: &str) -> bool {
    token.len() > 2 && token.starts_with('[') && token.ends_with(']')
}

impl Vocab {
    /// Builds a vocabulary whose first five entries are the control tokens,
    /// followed by `tokens` in order with duplicates dropped.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
            special: SpecialIds {
                pad: 0,
                unk: 1,
                cls: 2,
                sep: 3,
                mask: 4,
            },
        };
        for t in [PAD, UNK, CLS, SEP, MASK] {
            vocab.push(t);
        }
        for t in tokens {
            vocab.push(t.as_ref());
        }
        vocab
    }

    /// Appends a token if absent and returns its id either way.
    pub fn push(&mut self, token: &str) -> u32 {
        let key = if is_special(token) {
            token.to_string()
        } else {
            token.to_lowercase()
        };
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(key.clone());
        self.index.insert(key, id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        if is_special(token) {
            if let Some(&id) = self.index.get(token) {
                return Some(id);
            }
        }
        self.index.get(&token.to_lowercase()).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Splits one word into vocabulary units. Returns `None` when no
    /// segmentation exists.
    pub fn tokenize_word(&self, word: &str) -> Option<Vec<u32>> {
        if word.is_empty() {
            return None;
        }
        if let Some(id) = self.id(word) {
            return Some(vec![id]);
        }
        let lower = word.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, CONTINUATION);
                }
                if let Some(&id) = self.index.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            pieces.push(found?);
            start = end;
        }
        Some(pieces)
    }

    /// Tokenizes a word, falling back to `[UNK]`.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        self.tokenize_word(word)
            .unwrap_or_else(|| vec![self.special.unk])
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words
            .iter()
            .flat_map(|w| self.encode_word(w.as_ref()))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&VocabFile {
            tokens: self.tokens.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        let expected = [PAD, UNK, CLS, SEP, MASK];
        if file.tokens.len() < expected.len()
            || file.tokens[..expected.len()] != expected.map(String::from)
        {
            return Err(Error::Checkpoint(
                "vocabulary must start with the five control tokens".into(),
            ));
        }
        let vocab = Vocab::new(&file.tokens[expected.len()..]);
        if vocab.len() != file.tokens.len() {
            return Err(Error::Checkpoint("vocabulary has duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
