use crate::error::{Error, Result};
use crate::numerics::{Rng, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then an 18:1:1 partition. Valid and test each get
/// `n / 20` items; the remainder goes to train.
pub fn split_dataset<T>(items: Vec<T>, seed: u64) -> Result<Split<T>> {
    let n = items.len();
    if n < 20 {
        return Err(Error::invalid(format!(
            "need at least 20 examples for an 18:1:1 split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::for_stream(seed, Stream::Split).shuffle(&mut order);

    let held_out = n / 20;
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<T> {
        idx.iter().map(|&i| slots[i].take().expect("index used once")).collect()
    };
    let valid = take(&order[..held_out]);
    let test = take(&order[held_out..2 * held_out]);
    let train = take(&order[2 * held_out..]);
    Ok(Split { train, valid, test })
}
