//! Corpus ingestion: JSONL review records, vocabulary, tokenization,
//! the 18:1:1 split and length-bucketed batching.

mod batch;
mod records;
mod schema;
mod split;
mod vocab;

pub use batch::{make_batches, Batch, DEFAULT_BUCKET_WIDTH};
pub use records::{load_examples, load_raw, LoadOptions, LoadedRecords, RawCorpus, RawRecord, Record};
pub use schema::{ContextSchema, ContextType};
pub use split::{split_dataset, Split};
pub use vocab::{Vocabulary, BOS, EOS, NUM_SPECIALS, PAD, SPECIAL_TOKENS, UNK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tokenized training example: `BOS … EOS` plus one value index per
/// context type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub contexts: Vec<usize>,
}

impl Example {
    pub fn new(tokens: Vec<usize>, contexts: Vec<usize>) -> Self {
        Example { tokens, contexts }
    }

    /// Number of predicted positions (everything after BOS).
    pub fn num_targets(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }

    /// Words between BOS and EOS.
    pub fn word_len(&self) -> usize {
        self.tokens.len().saturating_sub(2)
    }

    pub fn validate(&self, vocab_size: usize, cardinalities: &[usize]) -> Result<()> {
        if self.tokens.len() < 2 {
            return Err(Error::invalid(format!(
                "example has {} tokens, need at least BOS and EOS",
                self.tokens.len()
            )));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::invalid(format!(
                "token id {t} outside vocabulary of size {vocab_size}"
            )));
        }
        if self.contexts.len() != cardinalities.len() {
            return Err(Error::invalid(format!(
                "example has {} context values, schema has {}",
                self.contexts.len(),
                cardinalities.len()
            )));
        }
        for (i, (&c, &k)) in self.contexts.iter().zip(cardinalities).enumerate() {
            if c >= k {
                return Err(Error::invalid(format!(
                    "context {i} value {c} out of range (cardinality {k})"
                )));
            }
        }
        Ok(())
    }
}

/// Examples tokenized against a particular vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab_fingerprint: String,
    pub examples: Vec<Example>,
}

/// Tokenizes records. With `drop_unknown`, records containing any
/// out-of-vocabulary word are removed instead of mapped to UNK; the second
/// return value counts them.
pub fn tokenize_records(
    records: &[Record],
    vocab: &Vocabulary,
    drop_unknown: bool,
) -> (Vec<Example>, usize) {
    let mut dropped = 0;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let tokens = vocab.tokenize(&r.text);
        if drop_unknown && tokens.contains(&UNK) {
            dropped += 1;
            continue;
        }
        out.push(Example::new(tokens, r.contexts.clone()));
    }
    (out, dropped)
}
