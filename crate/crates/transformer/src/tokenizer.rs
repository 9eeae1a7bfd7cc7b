use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use photon_dfa_core::{Error, Result};

pub trait Tokenizer {
    fn vocab_size(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<usize>>;
    fn decode(&self, tokens: &[usize]) -> Result<String>;
}

/// One token per distinct character, ordered by code point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharTokenizer {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

/// JSON form of a tokenizer: its vocabulary in token order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerManifest {
    Char { vocabulary: Vec<char> },
    Vocab { vocabulary: Vec<String> },
}

impl CharTokenizer {
    pub fn from_corpus(corpus: &str) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidConfig("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut chars: Vec<char> = corpus.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Self::from_chars(chars)
    }

    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let index: HashMap<char, usize> = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        if index.len() != chars.len() || chars.is_empty() {
            return Err(Error::Format("character vocabulary must be non-empty and unique".into()));
        }
        Ok(Self { chars, index })
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn manifest(&self) -> TokenizerManifest {
        TokenizerManifest::Char {
            vocabulary: self.chars.clone(),
        }
    }
}

impl Tokenizer for CharTokenizer {
    fn vocab_size(&self) -> usize {
        self.chars.len()
    }

    fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index
                    .get(&c)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("character {c:?} is not in the vocabulary")))
            })
            .collect()
    }

    fn decode(&self, tokens: &[usize]) -> Result<String> {
        tokens
            .iter()
            .map(|&t| {
                self.chars.get(t).copied().ok_or(Error::IndexOutOfRange {
                    index: t,
                    len: self.chars.len(),
                })
            })
            .collect()
    }
}

/// Builds the vocabulary from `corpus` and encodes it.
pub fn tokenize(corpus: &str) -> Result<(CharTokenizer, Vec<usize>)> {
    let tok = CharTokenizer::from_corpus(corpus)?;
    let ids = tok.encode(corpus)?;
    Ok((tok, ids))
}

/// Greedy longest-match tokenizer over an externally supplied vocabulary,
/// one entry per line. Entries are literal strings; an empty line is ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabTokenizer {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
    longest: usize,
}

impl VocabTokenizer {
    pub fn new(pieces: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        if pieces.is_empty() || index.len() != pieces.len() || pieces.iter().any(String::is_empty) {
            return Err(Error::Format("subword vocabulary must be non-empty, unique and without blanks".into()));
        }
        let longest = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(Self { pieces, index, longest })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }

    pub fn manifest(&self) -> TokenizerManifest {
        TokenizerManifest::Vocab {
            vocabulary: self.pieces.clone(),
        }
    }
}

impl Tokenizer for VocabTokenizer {
    fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut at = 0;
        while at < chars.len() {
            let hit = (1..=self.longest.min(chars.len() - at)).rev().find_map(|len| {
                let piece: String = chars[at..at + len].iter().collect();
                self.index.get(&piece).map(|&id| (id, len))
            });
            let (id, len) = hit.ok_or_else(|| Error::Format(format!("no vocabulary entry matches at character {at}")))?;
            out.push(id);
            at += len;
        }
        Ok(out)
    }

    fn decode(&self, tokens: &[usize]) -> Result<String> {
        tokens
            .iter()
            .map(|&t| {
                self.pieces.get(t).map(String::as_str).ok_or(Error::IndexOutOfRange {
                    index: t,
                    len: self.pieces.len(),
                })
            })
            .collect()
    }
}

impl TokenizerManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            TokenizerManifest::Char { vocabulary } => vocabulary.len(),
            TokenizerManifest::Vocab { vocabulary } => vocabulary.len(),
        }
    }

    pub fn into_tokenizer(self) -> Result<Box<dyn Tokenizer>> {
        Ok(match self {
            TokenizerManifest::Char { vocabulary } => Box::new(CharTokenizer::from_chars(vocabulary)?),
            TokenizerManifest::Vocab { vocabulary } => Box::new(VocabTokenizer::new(vocabulary)?),
        })
    }
}
