use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ContextSchema, NUM_SPECIALS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Unconditioned LSTM language model.
    Rnn,
    /// Context embedding as the initial hidden state.
    C2s,
    /// C2S plus gated skip-connections from the context embedding.
    Gc2s,
}

impl Variant {
    pub fn uses_context(self) -> bool {
        !matches!(self, Variant::Rnn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Rnn => "rnn",
            Variant::C2s => "c2s",
            Variant::Gc2s => "gc2s",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(Variant::Rnn),
            "c2s" => Ok(Variant::C2s),
            "gc2s" => Ok(Variant::Gc2s),
            other => Err(Error::invalid(format!("unknown variant {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub context_embed_dim: usize,
    pub input_embed_dim: usize,
    pub schema: ContextSchema,
    pub dropout: f64,
    /// One recurrent matrix shared by all four LSTM gates.
    pub shared_recurrent: bool,
    /// Also start the memory cell at `h_C`.
    pub context_seeds_cell: bool,
    /// gC2S starts from `h₀ = h_C` like C2S. Ignored by the other variants.
    pub gated_initial_state: bool,
}

impl ModelConfig {
    /// Defaults: input embedding as wide as the hidden state, no dropout,
    /// separate recurrent matrices, `c₀ = 0`.
    pub fn new(
        variant: Variant,
        vocab_size: usize,
        hidden_size: usize,
        context_embed_dim: usize,
        schema: ContextSchema,
    ) -> Self {
        ModelConfig {
            variant,
            vocab_size,
            hidden_size,
            context_embed_dim,
            input_embed_dim: hidden_size,
            schema,
            dropout: 0.0,
            shared_recurrent: false,
            context_seeds_cell: false,
            gated_initial_state: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.context_embed_dim == 0 || self.input_embed_dim == 0 {
            return Err(Error::invalid("hidden, context and input dimensions must be at least 1"));
        }
        if self.vocab_size < NUM_SPECIALS + 1 {
            return Err(Error::invalid(format!(
                "vocabulary size {} leaves no content tokens",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Whether `h₀ = h_C`.
    pub(crate) fn context_sets_hidden(&self) -> bool {
        match self.variant {
            Variant::Rnn => false,
            Variant::C2s => true,
            Variant::Gc2s => self.gated_initial_state,
        }
    }
}
