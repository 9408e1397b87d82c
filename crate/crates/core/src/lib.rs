//! Context-conditioned text generation.
//!
//! Two conditional LSTM language models over categorical contexts (for
//! reviews: the star rating and the product id):
//!
//! * **C2S** embeds the contexts into a vector `h_C` and uses it as the
//!   decoder's initial hidden state.
//! * **gC2S** additionally adds `m_t ⊙ h_C` to the hidden state before the
//!   output layer at every step, where `m_t = σ(V·h_t + b)` is a learned gate.
//!
//! An unconditioned LSTM baseline is included for comparison. The crate
//! covers the full pipeline: corpus handling, hand-written BPTT, the SGD
//! training recipe, sampling and beam search, perplexity / gate attribution
//! reports and an n-gram logistic-regression detector.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
