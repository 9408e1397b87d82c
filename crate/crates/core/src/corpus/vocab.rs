use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token ↔ id map. Ids are contiguous from 0 and the four specials occupy
/// 0..4 in the order PAD, BOS, EOS, UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Vocabulary {
    /// Keeps the `max_size` most frequent lowercased words; ties go to the
    /// lexicographically smaller word. Specials are not counted against the cap.
    pub fn build<'a, I>(texts: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size == 0 {
            return Err(Error::invalid("vocabulary size must be at least 1"));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for w in words(text) {
                if SPECIAL_TOKENS.contains(&w.as_str()) {
                    continue;
                }
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size);

        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .collect();
        Vocabulary::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(Error::Data(format!(
                "vocabulary must start with {}",
                SPECIAL_TOKENS.join(", ")
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("vocabulary line {}: invalid token {t:?}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("vocabulary line {}: duplicate token {t:?}", i + 1)));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens after the specials, most frequent first.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// `BOS w₁ … wₙ EOS`, unknown words mapped to UNK.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids = vec![BOS];
        ids.extend(words(text).map(|w| self.id(&w).unwrap_or(UNK)));
        ids.push(EOS);
        ids
    }

    /// Joins the non-special tokens with single spaces. UNK is kept visible.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id >= NUM_SPECIALS || id == UNK)
            .map(|&id| self.tokens[id].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The on-disk form: one token per line, line number = id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// SHA-256 of the on-disk form, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_tokens(text.lines().map(str::to_string).collect())
    }
}
