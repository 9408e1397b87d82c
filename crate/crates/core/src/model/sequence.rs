use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::model::{LstmState, Model, StepTrace, Variant};
use crate::numerics::{
    dsigmoid_from_output, dtanh_from_output, log_softmax, matvec_t_add_into, outer_add_into, Rng,
    Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active (when configured); the forward cache is kept.
    Train,
    /// No dropout, no cache.
    Eval,
}

/// Gate activity at one predicted position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateStep {
    /// Index of the predicted token in the example.
    pub position: usize,
    pub token: usize,
    pub gate: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateTrace {
    pub steps: Vec<GateStep>,
}

#[derive(Clone, Debug)]
struct StepCache {
    x: Vec<f64>,
    in_mask: Option<Vec<f64>>,
    trace: StepTrace,
    m: Option<Vec<f64>>,
    out_mask: Option<Vec<f64>>,
    s: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Cache {
    concat: Option<Vec<f64>>,
    h_c: Option<Vec<f64>>,
    init: LstmState,
    steps: Vec<StepCache>,
}

/// Result of a teacher-forced pass over one example.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `−Σ log p(x_t | x_<t, C)` over every position after BOS.
    pub loss: f64,
    pub token_log_probs: Vec<f64>,
    pub gate_trace: Option<GateTrace>,
    cache: Option<Cache>,
}

impl Forward {
    pub fn num_targets(&self) -> usize {
        self.token_log_probs.len()
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

fn dropout_mask(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect()
}

fn mul_in_place(v: &mut [f64], mask: &[f64]) {
    v.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
}

impl Model {
    /// Teacher-forced log-loss of `example`. In [`Mode::Train`] dropout masks
    /// (input→hidden and hidden→output) are drawn from `rng` and the
    /// activations are cached for [`Model::backward_sequence`].
    pub fn forward_sequence(
        &self,
        example: &Example,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<Forward> {
        let tokens = &example.tokens;
        if tokens.len() < 2 {
            return Err(Error::invalid(format!(
                "sequence of length {} has nothing to predict",
                tokens.len()
            )));
        }
        let v = self.config.vocab_size;
        if let Some(&t) = tokens.iter().find(|&&t| t >= v) {
            return Err(Error::invalid(format!("token id {t} outside vocabulary of size {v}")));
        }
        let rate = if mode == Mode::Train { self.config.dropout } else { 0.0 };
        let mut rng = rng;
        if rate > 0.0 && rng.is_none() {
            return Err(Error::invalid("train-mode dropout needs an rng"));
        }
        let keep_cache = mode == Mode::Train;

        let (concat, h_c) = if self.config.variant.uses_context() {
            let concat = self.context_concat(&example.contexts)?;
            let h_c = self.encode_concat(&concat);
            (Some(concat), Some(h_c))
        } else {
            (None, None)
        };
        let n = self.config.hidden_size;
        let init = LstmState {
            h: match &h_c {
                Some(hc) if self.config.context_sets_hidden() => hc.clone(),
                _ => vec![0.0; n],
            },
            c: match &h_c {
                Some(hc) if self.config.context_seeds_cell => hc.clone(),
                _ => vec![0.0; n],
            },
        };

        let gated = self.config.variant == Variant::Gc2s;
        let mut state = init.clone();
        let mut loss = 0.0;
        let mut token_log_probs = Vec::with_capacity(tokens.len() - 1);
        let mut gate_steps = Vec::new();
        let mut steps = Vec::new();

        for t in 0..tokens.len() - 1 {
            let target = tokens[t + 1];
            let mut x = self.embed(tokens[t])?;
            let in_mask = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => {
                    let m = dropout_mask(x.len(), rate, r);
                    mul_in_place(&mut x, &m);
                    Some(m)
                }
                _ => None,
            };
            let (next, trace) = self.lstm_step(&x, &state)?;
            let m = if gated { Some(self.gate(&next.h)?) } else { None };
            let mut h_out = next.h.clone();
            let out_mask = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => {
                    let mask = dropout_mask(n, rate, r);
                    mul_in_place(&mut h_out, &mask);
                    Some(mask)
                }
                _ => None,
            };
            let s = self.output_input(&h_out, if gated { h_c.as_deref() } else { None }, m.as_deref())?;
            let logp = log_softmax(&self.logits(&s));
            let lp = logp[target];
            if !lp.is_finite() {
                return Err(Error::NonFinite(format!("log-probability at position {}", t + 1)));
            }
            loss -= lp;
            token_log_probs.push(lp);
            if let Some(m) = &m {
                gate_steps.push(GateStep {
                    position: t + 1,
                    token: target,
                    mean: m.iter().sum::<f64>() / n as f64,
                    gate: m.clone(),
                });
            }
            if keep_cache {
                steps.push(StepCache {
                    x,
                    in_mask,
                    trace,
                    m,
                    out_mask,
                    s,
                    probs: logp.into_iter().map(f64::exp).collect(),
                });
            }
            state = next;
        }

        Ok(Forward {
            loss,
            token_log_probs,
            gate_trace: gated.then_some(GateTrace { steps: gate_steps }),
            cache: keep_cache.then_some(Cache {
                concat,
                h_c,
                init,
                steps,
            }),
        })
    }

    /// Eval-mode loss.
    pub fn sequence_loss(&self, example: &Example) -> Result<f64> {
        Ok(self.forward_sequence(example, Mode::Eval, None)?.loss)
    }

    /// Accumulates `scale · ∂loss/∂θ` into the model's gradient buffers.
    pub fn backward_sequence(&mut self, example: &Example, fwd: &Forward, scale: f64) -> Result<()> {
        let mut grads = std::mem::take(self.params.grads_mut_vec());
        let out = self.backward_into(example, fwd, scale, &mut grads);
        *self.params.grads_mut_vec() = grads;
        out
    }

    /// Backpropagation through time into caller-owned gradient buffers
    /// (shaped like [`crate::numerics::ParamStore::zeroed_grads`]).
    pub fn backward_into(
        &self,
        example: &Example,
        fwd: &Forward,
        scale: f64,
        grads: &mut [Tensor],
    ) -> Result<()> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or(Error::MissingCache("backward needs a train-mode forward pass"))?;
        if cache.steps.len() + 1 != example.tokens.len() {
            return Err(Error::invalid("forward cache does not match the example"));
        }
        let h = &self.h;
        let n = self.config.hidden_size;
        let out_w = self.params.value(h.out_w);
        let mut dh = vec![0.0; n];
        let mut dc = vec![0.0; n];
        let mut dh_c = vec![0.0; n];

        for t in (0..cache.steps.len()).rev() {
            let sc = &cache.steps[t];
            let target = example.tokens[t + 1];

            let mut dlogits: Vec<f64> = sc.probs.iter().map(|p| p * scale).collect();
            dlogits[target] -= scale;
            outer_add_into(&mut grads[h.out_w.index()], &dlogits, &sc.s);
            for (g, d) in grads[h.out_b.index()].data_mut().iter_mut().zip(&dlogits) {
                *g += d;
            }
            let mut ds = vec![0.0; n];
            matvec_t_add_into(out_w, &dlogits, &mut ds);

            if let (Some(m), Some(hc)) = (&sc.m, &cache.h_c) {
                let (gw, gb) = (h.gate_w.expect("gated"), h.gate_b.expect("gated"));
                let da_m: Vec<f64> = (0..n)
                    .map(|k| ds[k] * hc[k] * dsigmoid_from_output(m[k]))
                    .collect();
                for k in 0..n {
                    dh_c[k] += ds[k] * m[k];
                }
                outer_add_into(&mut grads[gw.index()], &da_m, &sc.trace.h);
                for (g, d) in grads[gb.index()].data_mut().iter_mut().zip(&da_m) {
                    *g += d;
                }
                matvec_t_add_into(self.params.value(gw), &da_m, &mut dh);
            }
            match &sc.out_mask {
                Some(mask) => (0..n).for_each(|k| dh[k] += ds[k] * mask[k]),
                None => (0..n).for_each(|k| dh[k] += ds[k]),
            }

            let prev = if t == 0 {
                cache.init.clone()
            } else {
                let p = &cache.steps[t - 1].trace;
                LstmState {
                    h: p.h.clone(),
                    c: p.c.clone(),
                }
            };
            let mut dx = self.lstm_step_backward(&sc.x, &prev, &sc.trace, &mut dh, &mut dc, grads);
            if let Some(mask) = &sc.in_mask {
                mul_in_place(&mut dx, mask);
            }
            grads[h.input_embed.index()].add_to_column(example.tokens[t], &dx);
        }

        if let (Some(hc), Some(concat)) = (&cache.h_c, &cache.concat) {
            if self.config.context_sets_hidden() {
                (0..n).for_each(|k| dh_c[k] += dh[k]);
            }
            if self.config.context_seeds_cell {
                (0..n).for_each(|k| dh_c[k] += dc[k]);
            }
            let da: Vec<f64> = (0..n).map(|k| dh_c[k] * dtanh_from_output(hc[k])).collect();
            outer_add_into(&mut grads[h.enc_w.index()], &da, concat);
            for (g, d) in grads[h.enc_b.index()].data_mut().iter_mut().zip(&da) {
                *g += d;
            }
            let mut dconcat = vec![0.0; concat.len()];
            matvec_t_add_into(self.params.value(h.enc_w), &da, &mut dconcat);
            let d = self.config.context_embed_dim;
            for (i, (&id, &c)) in h.ctx_embed.iter().zip(&example.contexts).enumerate() {
                grads[id.index()].add_to_column(c, &dconcat[i * d..(i + 1) * d]);
            }
        }
        Ok(())
    }
}
