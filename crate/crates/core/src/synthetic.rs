//! Small generated datasets with known structure, used by the test suites
//! and for desk-scale demonstrations.

use serde::Serialize;

use crate::corpus::{ContextSchema, Example, BOS, EOS, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Examples over a vocabulary of anonymous ids (`NUM_SPECIALS..vocab_size`).
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub schema: ContextSchema,
    pub vocab_size: usize,
    pub examples: Vec<Example>,
    /// Token ids whose identity is fixed by the context.
    pub key_tokens: Vec<usize>,
}

fn wrap(words: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut t = vec![BOS];
    t.extend(words);
    t.push(EOS);
    t
}

/// Context pair `(a, b) ∈ {0,1}×{0,1,2}` selects one of six fixed
/// five-word sequences. Each sequence appears `copies` times.
pub fn context_lookup(copies: usize) -> Result<SyntheticTask> {
    let schema = ContextSchema::with_cardinalities(&[2, 3])?;
    let content = 12;
    let mut examples = Vec::new();
    for _ in 0..copies {
        for (a, b) in (0..2).flat_map(|a| (0..3).map(move |b| (a, b))) {
            examples.push(Example::new(lookup_sequence(a, b), vec![a, b]));
        }
    }
    Ok(SyntheticTask {
        schema,
        vocab_size: NUM_SPECIALS + content,
        examples,
        key_tokens: Vec::new(),
    })
}

/// The target sequence of [`context_lookup`] for context `(a, b)`.
pub fn lookup_sequence(a: usize, b: usize) -> Vec<usize> {
    let k = a * 3 + b;
    // Sequences share words but differ from the first one on, and the
    // second half is shared between contexts with the same `a`.
    wrap([
        NUM_SPECIALS + k,
        NUM_SPECIALS + (k + 4) % 12,
        NUM_SPECIALS + 6 + a,
        NUM_SPECIALS + 8 + b,
        NUM_SPECIALS + 11 - a,
    ])
}

/// `n` sequences of `len` words, each an arithmetic progression
/// `start, start+step, …` over 20 content tokens (mod 20). The first context
/// fixes the step, the second the start, so every example has its own
/// context pair. `seed` relabels the content tokens.
pub fn progression(n: usize, len: usize, seed: u64) -> Result<SyntheticTask> {
    let content = 20;
    let first = 5;
    let second = n.div_ceil(first).max(1);
    let schema = ContextSchema::with_cardinalities(&[first, second])?;
    let mut labels: Vec<usize> = (NUM_SPECIALS..NUM_SPECIALS + content).collect();
    Rng::new(seed, 0x5e9).shuffle(&mut labels);
    let examples = (0..n)
        .map(|i| {
            let (a, b) = (i % first, i / first);
            let start = 2 * b + b / 10;
            let step = 1 + a;
            let words = (0..len).map(|j| labels[(start + j * step) % content]);
            Example::new(wrap(words), vec![a, b])
        })
        .collect();
    Ok(SyntheticTask {
        schema,
        vocab_size: NUM_SPECIALS + content,
        examples,
        key_tokens: Vec::new(),
    })
}

/// Layout of [`long_range`] sequences.
#[derive(Clone, Copy, Debug)]
pub struct LongRangeSpec {
    /// Words per sequence (before BOS/EOS).
    pub len: usize,
    /// Number of uniformly random filler word types.
    pub fillers: usize,
    /// Earliest word position of a marker.
    pub marker_from: usize,
    /// Marker/key pairs per sequence, one in each equal slot of
    /// `marker_from..len`.
    pub markers: usize,
}

impl Default for LongRangeSpec {
    fn default() -> Self {
        LongRangeSpec {
            len: 60,
            fillers: 64,
            marker_from: 40,
            markers: 1,
        }
    }
}

impl LongRangeSpec {
    pub fn marker(&self) -> usize {
        NUM_SPECIALS + self.fillers
    }

    pub fn key(&self, a: usize, b: usize) -> usize {
        self.marker() + 1 + a * 3 + b
    }

    pub fn vocab_size(&self) -> usize {
        self.marker() + 1 + 6
    }

    fn slot(&self) -> usize {
        (self.len - self.marker_from) / self.markers.max(1)
    }
}

/// Long sequences of i.i.d. filler words. At or after `marker_from` a marker
/// word appears `markers` times, each followed by a key fixed by the context
/// pair `(a, b) ∈ {0,1}×{0,1,2}`. Nothing else depends on the context, so
/// only the key positions reward remembering it.
pub fn long_range(n: usize, spec: LongRangeSpec, seed: u64) -> Result<SyntheticTask> {
    if spec.markers == 0 || spec.marker_from >= spec.len || spec.slot() < 2 || spec.fillers == 0 {
        return Err(Error::invalid(format!("inconsistent long-range layout {spec:?}")));
    }
    let schema = ContextSchema::with_cardinalities(&[2, 3])?;
    let mut rng = Rng::new(seed, 0x10e6);
    let mut examples = Vec::with_capacity(n);
    let slot = spec.slot();
    for _ in 0..n {
        let (a, b) = (rng.below(2), rng.below(3));
        let mut words: Vec<usize> = (0..spec.len)
            .map(|_| NUM_SPECIALS + rng.below(spec.fillers))
            .collect();
        for m in 0..spec.markers {
            let at = spec.marker_from + m * slot + rng.below(slot - 1);
            words[at] = spec.marker();
            words[at + 1] = spec.key(a, b);
        }
        examples.push(Example::new(wrap(words), vec![a, b]));
    }
    Ok(SyntheticTask {
        schema,
        vocab_size: spec.vocab_size(),
        examples,
        key_tokens: (0..2).flat_map(|a| (0..3).map(move |b| spec.key(a, b))).collect(),
    })
}

/// A review-shaped JSONL record.
#[derive(Clone, Debug, Serialize)]
pub struct ReviewRecord {
    pub text: String,
    pub rating: u8,
    pub product: String,
}

const OPENERS: [&[&str]; 5] = [
    &["terrible", "awful", "a waste of money", "very disappointing"],
    &["not great", "below average", "rather weak", "a letdown"],
    &["okay", "average", "decent enough", "not bad"],
    &["good", "really nice", "solid", "well made"],
    &["excellent", "amazing", "fantastic", "the best i have owned"],
];

const PRODUCTS: [(&str, &[&str]); 4] = [
    ("B0001", &["battery", "charger", "cable"]),
    ("B0002", &["story", "characters", "ending"]),
    ("B0003", &["screen", "picture", "remote"]),
    ("B0004", &["room", "staff", "breakfast"]),
];

/// Toy review corpus: the rating picks the sentiment phrase, the product
/// picks the nouns.
pub fn review_corpus(n: usize, seed: u64) -> Vec<ReviewRecord> {
    let mut rng = Rng::new(seed, 0x7e71e3);
    (0..n)
        .map(|_| {
            let rating = 1 + rng.below(5);
            let (product, nouns) = PRODUCTS[rng.below(PRODUCTS.len())];
            let opener = OPENERS[rating - 1][rng.below(4)];
            let noun = nouns[rng.below(nouns.len())];
            let other = nouns[rng.below(nouns.len())];
            let closer = if rating >= 4 { "would buy again" } else if rating == 3 { "it is fine" } else { "would not recommend" };
            ReviewRecord {
                text: format!("the {noun} is {opener} . the {other} is {opener} , {closer} ."),
                rating: rating as u8,
                product: product.to_string(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_sequences_are_distinct() {
        let task = context_lookup(1).unwrap();
        assert_eq!(task.examples.len(), 6);
        for (i, x) in task.examples.iter().enumerate() {
            x.validate(task.vocab_size, &task.schema.cardinalities()).unwrap();
            for y in &task.examples[i + 1..] {
                assert_ne!(x.tokens, y.tokens);
            }
        }
    }

    #[test]
    fn progression_shape() {
        let task = progression(50, 10, 3).unwrap();
        assert_eq!(task.examples.len(), 50);
        let cards = task.schema.cardinalities();
        for ex in &task.examples {
            assert_eq!(ex.tokens.len(), 12);
            ex.validate(task.vocab_size, &cards).unwrap();
        }
        let mut ctx: Vec<_> = task.examples.iter().map(|e| e.contexts.clone()).collect();
        ctx.sort();
        ctx.dedup();
        assert_eq!(ctx.len(), 50);
    }

    #[test]
    fn long_range_key_follows_marker_late() {
        for markers in [1, 4] {
            let spec = LongRangeSpec { markers, ..LongRangeSpec::default() };
            let task = long_range(40, spec, 9).unwrap();
            for ex in &task.examples {
                ex.validate(task.vocab_size, &task.schema.cardinalities()).unwrap();
                let words = &ex.tokens[1..ex.tokens.len() - 1];
                assert_eq!(words.len(), 60);
                let at: Vec<usize> = (0..60).filter(|&i| words[i] == spec.marker()).collect();
                assert_eq!(at.len(), markers);
                for &i in &at {
                    assert!(i >= spec.marker_from);
                    assert_eq!(words[i + 1], spec.key(ex.contexts[0], ex.contexts[1]));
                }
                assert_eq!(words.iter().filter(|&&w| w > spec.marker()).count(), markers);
            }
        }
        assert!(long_range(1, LongRangeSpec { markers: 11, ..LongRangeSpec::default() }, 0).is_err());
    }

    #[test]
    fn review_corpus_is_deterministic() {
        let a = review_corpus(10, 1);
        let b = review_corpus(10, 1);
        assert_eq!(
            a.iter().map(|r| &r.text).collect::<Vec<_>>(),
            b.iter().map(|r| &r.text).collect::<Vec<_>>()
        );
        assert!(a.iter().all(|r| (1..=5).contains(&r.rating)));
    }
}
