//! The conditional decoders and their hand-written backward passes.
//!
//! Parameter names in the store (and in checkpoints):
//!
//! | name                      | shape        |
//! |---------------------------|--------------|
//! | `context.<type>.embedding`| `d × K_i`    |
//! | `context.encoder.weight`  | `N × K·d`    |
//! | `context.encoder.bias`    | `N`          |
//! | `input.embedding`         | `E × V`      |
//! | `lstm.w_{z,i,f,o}`        | `N × E`      |
//! | `lstm.u_{z,i,f,o}`        | `N × N` (`lstm.u_h` when shared) |
//! | `lstm.b_{z,i,f,o}`        | `N`          |
//! | `gate.weight`, `gate.bias`| `N × N`, `N` (gC2S only) |
//! | `output.weight`           | `V × N`      |
//! | `output.bias`             | `V`          |

mod config;
mod sequence;
mod step;

pub use config::{ModelConfig, Variant};
pub use sequence::{Forward, GateStep, GateTrace, Mode};
pub use step::{LstmState, StepTrace};

use crate::corpus::ContextSchema;
use crate::error::{Error, Result};
use crate::numerics::{
    matvec_add_into, sigmoid, softmax_with_temperature, ParamId, ParamKind, ParamStore, Tensor,
};

pub(crate) const GATE_NAMES: [&str; 4] = ["z", "i", "f", "o"];
pub(crate) const Z: usize = 0;
pub(crate) const I: usize = 1;
pub(crate) const F: usize = 2;
pub(crate) const O: usize = 3;

#[derive(Clone, Debug)]
pub(crate) struct Handles {
    pub ctx_embed: Vec<ParamId>,
    pub enc_w: ParamId,
    pub enc_b: ParamId,
    pub input_embed: ParamId,
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub gate_w: Option<ParamId>,
    pub gate_b: Option<ParamId>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// A configured model and its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    h: Handles,
}

impl Model {
    /// All parameters zero. Use the training module's initialiser for a
    /// trainable starting point.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.hidden_size;
        let d = config.context_embed_dim;
        let e = config.input_embed_dim;
        let v = config.vocab_size;
        let mut p = ParamStore::new();

        let mut ctx_embed = Vec::new();
        for t in config.schema.types() {
            ctx_embed.push(p.add(
                &format!("context.{}.embedding", t.name),
                ParamKind::Weight,
                &[d, t.cardinality()],
            )?);
        }
        let enc_w = p.add("context.encoder.weight", ParamKind::Weight, &[n, config.schema.len() * d])?;
        let enc_b = p.add("context.encoder.bias", ParamKind::Bias, &[n])?;
        let input_embed = p.add("input.embedding", ParamKind::Weight, &[e, v])?;

        let mut w = Vec::new();
        for g in GATE_NAMES {
            w.push(p.add(&format!("lstm.w_{g}"), ParamKind::Weight, &[n, e])?);
        }
        let u: Vec<ParamId> = if config.shared_recurrent {
            let shared = p.add("lstm.u_h", ParamKind::Weight, &[n, n])?;
            vec![shared; 4]
        } else {
            GATE_NAMES
                .iter()
                .map(|g| p.add(&format!("lstm.u_{g}"), ParamKind::Weight, &[n, n]))
                .collect::<Result<_>>()?
        };
        let mut b = Vec::new();
        for g in GATE_NAMES {
            b.push(p.add(&format!("lstm.b_{g}"), ParamKind::Bias, &[n])?);
        }
        let (gate_w, gate_b) = if config.variant == Variant::Gc2s {
            (
                Some(p.add("gate.weight", ParamKind::Weight, &[n, n])?),
                Some(p.add("gate.bias", ParamKind::Bias, &[n])?),
            )
        } else {
            (None, None)
        };
        let out_w = p.add("output.weight", ParamKind::Weight, &[v, n])?;
        let out_b = p.add("output.bias", ParamKind::Bias, &[v])?;

        let four = |x: Vec<ParamId>| -> [ParamId; 4] { [x[0], x[1], x[2], x[3]] };
        let h = Handles {
            ctx_embed,
            enc_w,
            enc_b,
            input_embed,
            w: four(w),
            u: four(u),
            b: four(b),
            gate_w,
            gate_b,
            out_w,
            out_b,
        };
        Ok(Model { config, params: p, h })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn schema(&self) -> &ContextSchema {
        &self.config.schema
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }


    fn value(&self, id: ParamId) -> &Tensor {
        self.params.value(id)
    }

    pub(crate) fn check_contexts(&self, contexts: &[usize]) -> Result<()> {
        let schema = &self.config.schema;
        if contexts.len() != schema.len() {
            return Err(Error::invalid(format!(
                "expected {} context values, got {}",
                schema.len(),
                contexts.len()
            )));
        }
        for (t, &c) in schema.types().iter().zip(contexts) {
            if c >= t.cardinality() {
                return Err(Error::invalid(format!(
                    "context {} index {c} out of range (cardinality {})",
                    t.name,
                    t.cardinality()
                )));
            }
        }
        Ok(())
    }

    /// Concatenated context embeddings `[E₁c₁; …; E_K c_K]`.
    pub(crate) fn context_concat(&self, contexts: &[usize]) -> Result<Vec<f64>> {
        self.check_contexts(contexts)?;
        let mut concat = Vec::with_capacity(self.config.schema.len() * self.config.context_embed_dim);
        for (&id, &c) in self.h.ctx_embed.iter().zip(contexts) {
            concat.extend(self.value(id).column(c));
        }
        Ok(concat)
    }

    /// `h_C = tanh(W_enc · [e₁; …; e_K] + b_enc)` with `e_i` the selected column of `E_i`.
    pub fn encode_context(&self, contexts: &[usize]) -> Result<Vec<f64>> {
        let concat = self.context_concat(contexts)?;
        Ok(self.encode_concat(&concat))
    }

    pub(crate) fn encode_concat(&self, concat: &[f64]) -> Vec<f64> {
        let mut a = self.value(self.h.enc_b).data().to_vec();
        matvec_add_into(self.value(self.h.enc_w), concat, &mut a);
        a.iter_mut().for_each(|x| *x = x.tanh());
        a
    }

    /// `m = σ(V·h + b)`. Only gC2S models have a gate.
    pub fn gate(&self, h: &[f64]) -> Result<Vec<f64>> {
        let (Some(w), Some(b)) = (self.h.gate_w, self.h.gate_b) else {
            return Err(Error::RequiresGated("gate"));
        };
        if h.len() != self.config.hidden_size {
            return Err(Error::Shape {
                op: "gate",
                left: self.value(w).shape().to_vec(),
                right: vec![h.len()],
            });
        }
        let mut a = self.value(b).data().to_vec();
        matvec_add_into(self.value(w), h, &mut a);
        Ok(a.into_iter().map(sigmoid).collect())
    }

    /// Input embedding of a token: column `token` of the input matrix.
    pub fn embed(&self, token: usize) -> Result<Vec<f64>> {
        if token >= self.config.vocab_size {
            return Err(Error::invalid(format!(
                "token id {token} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(self.value(self.h.input_embed).column(token))
    }

    /// `O·s + bias`.
    pub(crate) fn logits(&self, s: &[f64]) -> Vec<f64> {
        let mut out = self.value(self.h.out_b).data().to_vec();
        matvec_add_into(self.value(self.h.out_w), s, &mut out);
        out
    }

    /// The output-layer input: `h` for RNN/C2S, `h + m ⊙ h_C` for gC2S.
    pub(crate) fn output_input(
        &self,
        h: &[f64],
        h_c: Option<&[f64]>,
        m: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        match (self.config.variant, h_c, m) {
            (Variant::Gc2s, Some(hc), Some(m)) => {
                if hc.len() != h.len() || m.len() != h.len() {
                    return Err(Error::Shape {
                        op: "gated output",
                        left: vec![h.len()],
                        right: vec![hc.len(), m.len()],
                    });
                }
                Ok(h.iter().zip(hc).zip(m).map(|((h, c), m)| h + m * c).collect())
            }
            (Variant::Rnn | Variant::C2s, None, None) => Ok(h.to_vec()),
            (v, _, _) => Err(Error::invalid(format!(
                "{v} output expects {} context embedding and gate",
                if v == Variant::Gc2s { "both a" } else { "neither a" }
            ))),
        }
    }

    /// Next-token distribution at temperature `t`.
    pub fn output_distribution(
        &self,
        h: &[f64],
        h_c: Option<&[f64]>,
        m: Option<&[f64]>,
        temperature: f64,
    ) -> Result<Vec<f64>> {
        let s = self.output_input(h, h_c, m)?;
        softmax_with_temperature(&self.logits(&s), temperature)
    }

    /// Decoder state before the first input token: `h₀ = h_C` for the
    /// conditioned variants (unless disabled for gC2S), `c₀ = 0` unless
    /// `context_seeds_cell` is set. Also returns `h_C` when the variant uses it.
    pub fn initial_state(&self, contexts: &[usize]) -> Result<(LstmState, Option<Vec<f64>>)> {
        let n = self.config.hidden_size;
        if !self.config.variant.uses_context() {
            return Ok((LstmState::zeros(n), None));
        }
        let h_c = self.encode_context(contexts)?;
        let state = LstmState {
            h: if self.config.context_sets_hidden() { h_c.clone() } else { vec![0.0; n] },
            c: if self.config.context_seeds_cell { h_c.clone() } else { vec![0.0; n] },
        };
        Ok((state, Some(h_c)))
    }

    /// Feeds `token` and returns the new state, the output logits and the
    /// gate vector (gC2S).
    pub fn step(
        &self,
        state: &LstmState,
        token: usize,
        h_c: Option<&[f64]>,
    ) -> Result<(LstmState, Vec<f64>, Option<Vec<f64>>)> {
        let x = self.embed(token)?;
        let (next, _) = self.lstm_step(&x, state)?;
        let m = match self.config.variant {
            Variant::Gc2s => Some(self.gate(&next.h)?),
            _ => None,
        };
        let h_c = if m.is_some() { h_c } else { None };
        let s = self.output_input(&next.h, h_c, m.as_deref())?;
        let logits = self.logits(&s);
        Ok((next, logits, m))
    }
}

#[cfg(test)]
mod tests;
