use crate::error::{Error, Result};
use crate::model::{Model, F, I, O, Z};
use crate::numerics::{
    dsigmoid_from_output, dtanh_from_output, matvec_add_into, matvec_t_add_into, outer_add_into,
    sigmoid, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(n: usize) -> Self {
        LstmState {
            h: vec![0.0; n],
            c: vec![0.0; n],
        }
    }
}

/// Everything one LSTM step computed, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    /// Gate pre-activations in z, i, f, o order.
    pub pre: [Vec<f64>; 4],
    pub z: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl Model {
    /// One LSTM update:
    ///
    /// ```text
    /// z = tanh(W_z x + U_z h + b_z)     i = σ(W_i x + U_i h + b_i)
    /// f = σ(W_f x + U_f h + b_f)        c' = f ⊙ c + i ⊙ z
    /// o = σ(W_o x + U_o h + b_o)        h' = o ⊙ tanh(c')
    /// ```
    pub fn lstm_step(&self, x: &[f64], prev: &LstmState) -> Result<(LstmState, StepTrace)> {
        let n = self.config.hidden_size;
        if x.len() != self.config.input_embed_dim || prev.h.len() != n || prev.c.len() != n {
            return Err(Error::Shape {
                op: "lstm_step",
                left: vec![self.config.input_embed_dim, n, n],
                right: vec![x.len(), prev.h.len(), prev.c.len()],
            });
        }
        if x.iter().chain(&prev.h).chain(&prev.c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lstm_step input".into()));
        }
        let h = &self.h;
        let pre: [Vec<f64>; 4] = std::array::from_fn(|k| {
            let mut a = self.params.value(h.b[k]).data().to_vec();
            matvec_add_into(self.params.value(h.w[k]), x, &mut a);
            matvec_add_into(self.params.value(h.u[k]), &prev.h, &mut a);
            a
        });
        let z: Vec<f64> = pre[Z].iter().map(|a| a.tanh()).collect();
        let i: Vec<f64> = pre[I].iter().copied().map(sigmoid).collect();
        let f: Vec<f64> = pre[F].iter().copied().map(sigmoid).collect();
        let o: Vec<f64> = pre[O].iter().copied().map(sigmoid).collect();
        let c: Vec<f64> = (0..n).map(|k| f[k] * prev.c[k] + i[k] * z[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
        let state = LstmState {
            h: h_new.clone(),
            c: c.clone(),
        };
        Ok((
            state,
            StepTrace {
                pre,
                z,
                i,
                f,
                o,
                c,
                tanh_c,
                h: h_new,
            },
        ))
    }

    /// Backward through one LSTM step. `dh` and `dc` are the gradients
    /// arriving at `h'` and `c'`; on return they hold the gradients with
    /// respect to the previous `h` and `c`. Returns the gradient for `x`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn lstm_step_backward(
        &self,
        x: &[f64],
        prev: &LstmState,
        trace: &StepTrace,
        dh: &mut Vec<f64>,
        dc: &mut Vec<f64>,
        grads: &mut [Tensor],
    ) -> Vec<f64> {
        let n = self.config.hidden_size;
        let h = &self.h;
        let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        for k in 0..n {
            let d_o = dh[k] * trace.tanh_c[k];
            let dck = dc[k] + dh[k] * trace.o[k] * dtanh_from_output(trace.tanh_c[k]);
            da[Z][k] = dck * trace.i[k] * dtanh_from_output(trace.z[k]);
            da[I][k] = dck * trace.z[k] * dsigmoid_from_output(trace.i[k]);
            da[F][k] = dck * prev.c[k] * dsigmoid_from_output(trace.f[k]);
            da[O][k] = d_o * dsigmoid_from_output(trace.o[k]);
            dc[k] = dck * trace.f[k];
        }
        let mut dx = vec![0.0; x.len()];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (g, d) in da.iter().enumerate() {
            outer_add_into(&mut grads[h.w[g].index()], d, x);
            outer_add_into(&mut grads[h.u[g].index()], d, &prev.h);
            for (acc, v) in grads[h.b[g].index()].data_mut().iter_mut().zip(d) {
                *acc += v;
            }
            matvec_t_add_into(self.params.value(h.w[g]), d, &mut dx);
            matvec_t_add_into(self.params.value(h.u[g]), d, dh);
        }
        dx
    }
}
