use std::collections::BTreeMap;

use crate::corpus::{Example, PAD};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const DEFAULT_BUCKET_WIDTH: usize = 10;

/// A padded group of examples of similar length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Row-major `[rows × max_len]`, padded with PAD.
    pub token_matrix: Vec<usize>,
    pub max_len: usize,
    pub lengths: Vec<usize>,
    /// 1 on positions `1..len` of each row (the predicted tokens), else 0.
    pub loss_mask: Vec<u8>,
    pub context_matrix: Vec<Vec<usize>>,
    /// Positions of the rows in the source example slice.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[Example], indices: &[usize]) -> Self {
        let max_len = indices.iter().map(|&i| examples[i].tokens.len()).max().unwrap_or(0);
        let rows = indices.len();
        let mut token_matrix = vec![PAD; rows * max_len];
        let mut loss_mask = vec![0u8; rows * max_len];
        let mut lengths = Vec::with_capacity(rows);
        let mut context_matrix = Vec::with_capacity(rows);
        for (r, &i) in indices.iter().enumerate() {
            let ex = &examples[i];
            let row = r * max_len;
            token_matrix[row..row + ex.tokens.len()].copy_from_slice(&ex.tokens);
            for t in 1..ex.tokens.len() {
                loss_mask[row + t] = 1;
            }
            lengths.push(ex.tokens.len());
            context_matrix.push(ex.contexts.clone());
        }
        Batch {
            token_matrix,
            max_len,
            lengths,
            loss_mask,
            context_matrix,
            indices: indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Unpadded tokens of row `r`.
    pub fn row(&self, r: usize) -> &[usize] {
        let start = r * self.max_len;
        &self.token_matrix[start..start + self.lengths[r]]
    }

    pub fn example(&self, r: usize) -> Example {
        Example::new(self.row(r).to_vec(), self.context_matrix[r].clone())
    }

    pub fn num_targets(&self) -> usize {
        self.loss_mask.iter().map(|&m| m as usize).sum()
    }
}

/// Groups examples into buckets of `bucket_width` token lengths, shuffles
/// within each bucket, cuts batches of at most `batch_size`, then shuffles
/// the batch order. Every example lands in exactly one batch.
pub fn make_batches(
    examples: &[Example],
    batch_size: usize,
    bucket_width: usize,
    rng: &mut Rng,
) -> Result<Vec<Batch>> {
    if batch_size == 0 || bucket_width == 0 {
        return Err(Error::invalid("batch size and bucket width must be at least 1"));
    }
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        buckets.entry(ex.tokens.len() / bucket_width).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut members) in buckets {
        rng.shuffle(&mut members);
        for chunk in members.chunks(batch_size) {
            batches.push(Batch::from_examples(examples, chunk));
        }
    }
    rng.shuffle(&mut batches);
    Ok(batches)
}
