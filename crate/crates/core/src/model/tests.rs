use super::*;
use crate::corpus::{ContextSchema, Example, BOS, EOS};
use crate::numerics::{grad_check, Rng, Tensor};

fn schema23() -> ContextSchema {
    ContextSchema::with_cardinalities(&[2, 3]).unwrap()
}

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig::new(variant, 12, 4, 3, schema23())
}

fn randomize(model: &mut Model, seed: u64, range: f64) {
    let mut rng = Rng::new(seed, 99);
    for t in model.params_mut().values_mut() {
        for x in t.data_mut() {
            *x = rng.uniform_range(-range, range);
        }
    }
}

fn example() -> Example {
    Example::new(vec![BOS, 5, 7, 4, 11, EOS], vec![1, 2])
}

fn check_gradients(mut model: Model, ex: &Example, dropout_seed: Option<u64>) -> f64 {
    let rng = || dropout_seed.map(|s| Rng::new(s, 2));
    model.params_mut().zero_grads();
    let mut r = rng();
    let fwd = model.forward_sequence(ex, Mode::Train, r.as_mut()).unwrap();
    model.backward_sequence(ex, &fwd, 1.0).unwrap();
    let probe = model.clone();
    let report = grad_check(
        model.params_mut(),
        |p| {
            let mut m = probe.clone();
            m.params_mut().values_mut().clone_from_slice(p.values());
            let mut r = rng();
            Ok(m.forward_sequence(ex, Mode::Train, r.as_mut())?.loss)
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    report.max_rel_error
}

#[test]
fn encode_context_zero_weights() {
    let mut m = Model::new(tiny(Variant::C2s)).unwrap();
    randomize(&mut m, 1, 0.5);
    m.params_mut().by_name_mut("context.encoder.weight").unwrap().fill(0.0);
    m.params_mut().by_name_mut("context.encoder.bias").unwrap().fill(0.0);
    for a in 0..2 {
        for b in 0..3 {
            assert_eq!(m.encode_context(&[a, b]).unwrap(), vec![0.0; 4]);
        }
    }
}

#[test]
fn encode_context_selects_one_column() {
    let schema = ContextSchema::with_cardinalities(&[3]).unwrap();
    let mut m = Model::new(ModelConfig::new(Variant::C2s, 8, 2, 2, schema)).unwrap();
    let e = m.params_mut().by_name_mut("context.c0.embedding").unwrap();
    e.set(0, 1, 0.25);
    e.set(1, 1, -0.5);
    assert_eq!(m.context_concat(&[1]).unwrap(), vec![0.25, -0.5]);
    // With W = I the encoder output is tanh of that column.
    *m.params_mut().by_name_mut("context.encoder.weight").unwrap() = Tensor::identity(2);
    let hc = m.encode_context(&[1]).unwrap();
    assert!((hc[0] - 0.25f64.tanh()).abs() < 1e-15 && (hc[1] - (-0.5f64).tanh()).abs() < 1e-15);
}

#[test]
fn encode_context_saturates() {
    let mut m = Model::new(tiny(Variant::C2s)).unwrap();
    m.params_mut().by_name_mut("context.encoder.bias").unwrap().fill(50.0);
    assert!(m.encode_context(&[0, 0]).unwrap().iter().all(|&x| (x - 1.0).abs() < 1e-12));
}

#[test]
fn encode_context_rejects_bad_index() {
    let m = Model::new(tiny(Variant::C2s)).unwrap();
    assert!(m.encode_context(&[2, 0]).is_err());
    assert!(m.encode_context(&[0, 3]).is_err());
    assert!(m.encode_context(&[0]).is_err());
}

fn scalar_model() -> Model {
    let schema = ContextSchema::with_cardinalities(&[1]).unwrap();
    let mut cfg = ModelConfig::new(Variant::C2s, 6, 1, 1, schema);
    cfg.input_embed_dim = 1;
    Model::new(cfg).unwrap()
}

#[test]
fn lstm_step_zero_params_from_unit_cell() {
    let m = scalar_model();
    let prev = LstmState { h: vec![0.0], c: vec![1.0] };
    let (next, tr) = m.lstm_step(&[0.3], &prev).unwrap();
    assert_eq!((tr.i[0], tr.f[0], tr.o[0], tr.z[0]), (0.5, 0.5, 0.5, 0.0));
    assert_eq!(next.c, vec![0.5]);
    // Direct scalar evaluation: h' = σ(0)·tanh(σ(0)·1 + σ(0)·tanh(0)).
    let expected = 0.5 * (0.5f64 * 1.0 + 0.5 * 0.0).tanh();
    assert!((next.h[0] - expected).abs() < 1e-15);
    assert!((next.h[0] - 0.23106).abs() < 1e-5);
}

#[test]
fn lstm_step_zero_fixed_point() {
    let m = scalar_model();
    let (next, _) = m.lstm_step(&[0.0], &LstmState::zeros(1)).unwrap();
    assert_eq!(next, LstmState::zeros(1));
}

#[test]
fn lstm_step_closed_forget_gate() {
    let mut m = scalar_model();
    m.params_mut().by_name_mut("lstm.b_f").unwrap().fill(-50.0);
    let (next, _) = m.lstm_step(&[0.0], &LstmState { h: vec![0.0], c: vec![7.0] }).unwrap();
    assert!(next.c[0].abs() < 1e-20);
}

#[test]
fn lstm_step_rejects_non_finite_and_bad_shapes() {
    let m = scalar_model();
    assert!(matches!(
        m.lstm_step(&[f64::NAN], &LstmState::zeros(1)),
        Err(Error::NonFinite(_))
    ));
    assert!(m.lstm_step(&[0.0, 0.0], &LstmState::zeros(1)).is_err());
}

#[test]
fn gate_examples() {
    let mut m = Model::new(tiny(Variant::Gc2s)).unwrap();
    assert_eq!(m.gate(&[0.3, -1.0, 2.0, 0.0]).unwrap(), vec![0.5; 4]);
    m.params_mut().by_name_mut("gate.bias").unwrap().fill(50.0);
    assert!(m.gate(&[0.0; 4]).unwrap().iter().all(|&x| (x - 1.0).abs() < 1e-15));
    m.params_mut().by_name_mut("gate.bias").unwrap().fill(-50.0);
    assert!(m.gate(&[0.0; 4]).unwrap().iter().all(|&x| x < 1e-20 && x > 0.0));
}

#[test]
fn gate_requires_gc2s() {
    let m = Model::new(tiny(Variant::C2s)).unwrap();
    assert!(matches!(m.gate(&[0.0; 4]), Err(Error::RequiresGated(_))));
}

#[test]
fn output_distribution_reductions() {
    let mut g = Model::new(tiny(Variant::Gc2s)).unwrap();
    randomize(&mut g, 3, 0.5);
    let mut c = Model::new(tiny(Variant::C2s)).unwrap();
    for name in c.params().names().to_vec() {
        *c.params_mut().by_name_mut(&name).unwrap() = g.params().by_name(&name).unwrap().clone();
    }
    let h = [0.1, -0.2, 0.3, 0.05];
    let hc = [0.7, 0.1, -0.4, 0.2];

    let closed = g.output_distribution(&h, Some(&hc), Some(&[0.0; 4]), 1.0).unwrap();
    let plain = c.output_distribution(&h, None, None, 1.0).unwrap();
    assert!(closed.iter().zip(&plain).all(|(a, b)| (a - b).abs() < 1e-15));

    let open = g.output_distribution(&h, Some(&hc), Some(&[1.0; 4]), 1.0).unwrap();
    let summed: Vec<f64> = h.iter().zip(&hc).map(|(a, b)| a + b).collect();
    let expected = c.output_distribution(&summed, None, None, 1.0).unwrap();
    assert!(open.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-15));

    let zero = Model::new(tiny(Variant::C2s)).unwrap();
    let p = zero.output_distribution(&h, None, None, 0.7).unwrap();
    assert!(p.iter().all(|&x| (x - 1.0 / 12.0).abs() < 1e-15));
}

#[test]
fn output_distribution_rejects_inconsistent_arguments() {
    let g = Model::new(tiny(Variant::Gc2s)).unwrap();
    let c = Model::new(tiny(Variant::C2s)).unwrap();
    let h = [0.0; 4];
    assert!(g.output_distribution(&h, None, None, 1.0).is_err());
    assert!(c.output_distribution(&h, Some(&h), Some(&h), 1.0).is_err());
}

#[test]
fn zero_model_loss_is_uniform() {
    for v in [Variant::Rnn, Variant::C2s, Variant::Gc2s] {
        let m = Model::new(tiny(v)).unwrap();
        let ex = example();
        let f = m.forward_sequence(&ex, Mode::Eval, None).unwrap();
        let expected = 5.0 * 12f64.ln();
        assert!((f.loss - expected).abs() < 1e-12, "{v}: {}", f.loss);
    }
}

#[test]
fn eval_is_deterministic_and_cacheless() {
    let mut cfg = tiny(Variant::Gc2s);
    cfg.dropout = 0.5;
    let mut m = Model::new(cfg).unwrap();
    randomize(&mut m, 4, 0.3);
    let a = m.forward_sequence(&example(), Mode::Eval, None).unwrap();
    let b = m.forward_sequence(&example(), Mode::Eval, None).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert!(!a.has_cache());
    let mut grads = m.params().zeroed_grads();
    assert!(matches!(
        m.backward_into(&example(), &a, 1.0, &mut grads),
        Err(Error::MissingCache(_))
    ));
}

#[test]
fn train_dropout_needs_rng() {
    let mut cfg = tiny(Variant::C2s);
    cfg.dropout = 0.3;
    let m = Model::new(cfg).unwrap();
    assert!(m.forward_sequence(&example(), Mode::Train, None).is_err());
}

#[test]
fn too_short_sequence_rejected() {
    let m = Model::new(tiny(Variant::C2s)).unwrap();
    assert!(m.forward_sequence(&Example::new(vec![BOS], vec![0, 0]), Mode::Eval, None).is_err());
}

#[test]
fn loss_is_sum_of_token_log_probs() {
    let mut m = Model::new(tiny(Variant::Gc2s)).unwrap();
    randomize(&mut m, 5, 0.5);
    let f = m.forward_sequence(&example(), Mode::Eval, None).unwrap();
    let sum: f64 = f.token_log_probs.iter().map(|lp| -lp).sum();
    assert!((f.loss - sum).abs() < 1e-9);
    assert_eq!(f.num_targets(), 5);
}

#[test]
fn gate_trace_values_are_in_unit_interval() {
    let mut m = Model::new(tiny(Variant::Gc2s)).unwrap();
    randomize(&mut m, 6, 2.0);
    let f = m.forward_sequence(&example(), Mode::Eval, None).unwrap();
    let trace = f.gate_trace.unwrap();
    assert_eq!(trace.steps.len(), 5);
    for s in &trace.steps {
        assert!(s.gate.iter().all(|&g| g > 0.0 && g < 1.0));
        assert!(s.mean > 0.0 && s.mean < 1.0);
        assert_eq!(s.token, example().tokens[s.position]);
    }
}

#[test]
fn closed_gate_matches_c2s_loss() {
    let mut g = Model::new(tiny(Variant::Gc2s)).unwrap();
    randomize(&mut g, 7, 0.5);
    g.params_mut().by_name_mut("gate.bias").unwrap().fill(-50.0);
    g.params_mut().by_name_mut("gate.weight").unwrap().fill(0.0);
    let mut c = Model::new(tiny(Variant::C2s)).unwrap();
    for name in c.params().names().to_vec() {
        *c.params_mut().by_name_mut(&name).unwrap() = g.params().by_name(&name).unwrap().clone();
    }
    let lg = g.sequence_loss(&example()).unwrap();
    let lc = c.sequence_loss(&example()).unwrap();
    assert!((lg - lc).abs() < 1e-9, "{lg} vs {lc}");
}

#[test]
fn gradients_match_finite_differences_for_all_variants() {
    for (seed, v) in [(10, Variant::Rnn), (11, Variant::C2s), (12, Variant::Gc2s)] {
        let mut m = Model::new(tiny(v)).unwrap();
        randomize(&mut m, seed, 0.5);
        check_gradients(m, &example(), None);
    }
}

#[test]
fn gradients_match_with_alternate_readings() {
    let mut cfg = tiny(Variant::Gc2s);
    cfg.shared_recurrent = true;
    cfg.context_seeds_cell = true;
    cfg.gated_initial_state = false;
    let mut m = Model::new(cfg).unwrap();
    randomize(&mut m, 13, 0.5);
    check_gradients(m, &example(), None);
}

#[test]
fn gradients_match_under_fixed_dropout_masks() {
    let mut cfg = tiny(Variant::Gc2s);
    cfg.dropout = 0.4;
    let mut m = Model::new(cfg).unwrap();
    randomize(&mut m, 14, 0.5);
    check_gradients(m, &example(), Some(77));
}

#[test]
fn unused_context_columns_get_no_gradient() {
    let mut m = Model::new(tiny(Variant::Gc2s)).unwrap();
    randomize(&mut m, 15, 0.5);
    let ex = example();
    let f = m.forward_sequence(&ex, Mode::Train, None).unwrap();
    m.backward_sequence(&ex, &f, 1.0).unwrap();
    let g0 = m.params().grad(m.params().id("context.c0.embedding").unwrap());
    let g1 = m.params().grad(m.params().id("context.c1.embedding").unwrap());
    for r in 0..3 {
        assert_eq!(g0.get(r, 0), 0.0);
        assert_ne!(g0.get(r, 1), 0.0);
        assert_eq!(g1.get(r, 0), 0.0);
        assert_eq!(g1.get(r, 1), 0.0);
        assert_ne!(g1.get(r, 2), 0.0);
    }
}

#[test]
fn baseline_leaves_context_encoder_untouched() {
    let mut m = Model::new(tiny(Variant::Rnn)).unwrap();
    randomize(&mut m, 16, 0.5);
    let ex = example();
    let f = m.forward_sequence(&ex, Mode::Train, None).unwrap();
    m.backward_sequence(&ex, &f, 1.0).unwrap();
    for id in m.params().ids() {
        if m.params().name(id).starts_with("context.") {
            assert!(m.params().grad(id).data().iter().all(|&g| g == 0.0));
        }
    }
}

#[test]
fn permuting_context_types_leaves_embedding_unchanged() {
    let mut m = Model::new(tiny(Variant::C2s)).unwrap();
    randomize(&mut m, 17, 0.5);
    let swapped_schema = ContextSchema::new(vec![
        m.schema().types()[1].clone(),
        m.schema().types()[0].clone(),
    ])
    .unwrap();
    let mut p = Model::new(ModelConfig::new(Variant::C2s, 12, 4, 3, swapped_schema)).unwrap();
    for name in p.params().names().to_vec() {
        if name != "context.encoder.weight" {
            *p.params_mut().by_name_mut(&name).unwrap() = m.params().by_name(&name).unwrap().clone();
        }
    }
    // Swap the two 3-column blocks of W_enc.
    let w = m.params().by_name("context.encoder.weight").unwrap().clone();
    let pw = p.params_mut().by_name_mut("context.encoder.weight").unwrap();
    for r in 0..4 {
        for k in 0..3 {
            pw.set(r, k, w.get(r, 3 + k));
            pw.set(r, 3 + k, w.get(r, k));
        }
    }
    for a in 0..2 {
        for b in 0..3 {
            let x = m.encode_context(&[a, b]).unwrap();
            let y = p.encode_context(&[b, a]).unwrap();
            assert!(x.iter().zip(&y).all(|(u, v)| (u - v).abs() < 1e-15));
        }
    }
}

#[test]
fn parallel_accumulation_is_order_independent() {
    let mut m = Model::new(tiny(Variant::Gc2s)).unwrap();
    randomize(&mut m, 18, 0.5);
    let exs = [
        example(),
        Example::new(vec![BOS, 6, EOS], vec![0, 1]),
        Example::new(vec![BOS, 9, 9, 8, EOS], vec![1, 0]),
    ];
    let grads_for = |order: &[usize]| {
        let mut total = m.params().zeroed_grads();
        for &i in order {
            let mut local = m.params().zeroed_grads();
            let f = m.forward_sequence(&exs[i], Mode::Train, None).unwrap();
            m.backward_into(&exs[i], &f, 1.0, &mut local).unwrap();
            for (t, l) in total.iter_mut().zip(&local) {
                t.data_mut().iter_mut().zip(l.data()).for_each(|(a, b)| *a += b);
            }
        }
        total
    };
    let a = grads_for(&[0, 1, 2]);
    let b = grads_for(&[2, 0, 1]);
    for (x, y) in a.iter().zip(&b) {
        assert!(x.data().iter().zip(y.data()).all(|(u, v)| (u - v).abs() < 1e-9));
    }
}
