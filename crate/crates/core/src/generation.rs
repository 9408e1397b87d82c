//! Decoding: temperature sampling, greedy decoding and beam search.
//!
//! All decoders go through [`StepModel`], so they can be exercised on
//! hand-built probability tables as well as on a trained [`Model`].

use serde::{Deserialize, Serialize};

use crate::corpus::{ContextSchema, Vocabulary, BOS, EOS, PAD, UNK};
use crate::model::{LstmState, Model};
use crate::numerics::{log_softmax, sample_categorical, softmax_with_temperature, Rng};
use crate::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

/// Default sampling length: the corpus word cap plus room for EOS.
pub const DEFAULT_MAX_LEN: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    /// Upper bound on emitted tokens, EOS included.
    pub max_len: usize,
    pub seed: u64,
    pub num_samples: usize,
    pub mask_unk: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_len: DEFAULT_MAX_LEN,
            seed: 1,
            num_samples: 1,
            mask_unk: false,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedText {
    /// Emitted ids, without the leading BOS; ends in EOS iff terminated by it.
    pub tokens: Vec<usize>,
    /// Filled by [`GeneratedText::render`].
    pub text: String,
    pub contexts: Vec<usize>,
    /// Model probability (T = 1, unmasked) of each emitted token.
    pub step_probs: Vec<f64>,
    pub logprob: f64,
    pub terminated_by: Termination,
    /// Mean gate value at each step (gC2S only).
    pub gate_means: Option<Vec<f64>>,
}

impl GeneratedText {
    pub fn render(mut self, vocab: &Vocabulary) -> Self {
        self.text = vocab.detokenize(&self.tokens);
        self
    }
}

/// Autoregressive next-token interface.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// State after the context is consumed, before BOS is fed.
    fn start(&self, contexts: &[usize]) -> Result<Self::State>;

    /// Feeds `token`; returns the next state, the output logits and the
    /// mean gate value if the model has one.
    fn advance(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>, Option<f64>)>;
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    lstm: LstmState,
    h_c: Option<Vec<f64>>,
}

impl StepModel for Model {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        Model::vocab_size(self)
    }

    fn start(&self, contexts: &[usize]) -> Result<DecoderState> {
        let (lstm, h_c) = self.initial_state(contexts)?;
        Ok(DecoderState { lstm, h_c })
    }

    fn advance(&self, state: &DecoderState, token: usize) -> Result<(DecoderState, Vec<f64>, Option<f64>)> {
        let (lstm, logits, m) = self.step(&state.lstm, token, state.h_c.as_deref())?;
        let mean = m.map(|m| m.iter().sum::<f64>() / m.len() as f64);
        Ok((DecoderState { lstm, h_c: state.h_c.clone() }, logits, mean))
    }
}

fn masked(token: usize, mask_unk: bool) -> bool {
    token == PAD || token == BOS || (mask_unk && token == UNK)
}

/// Sampling distribution: temperature softmax with reserved ids zeroed and
/// the rest renormalised.
pub fn sampling_distribution(logits: &[f64], temperature: f64, mask_unk: bool) -> Result<Vec<f64>> {
    let mut p = softmax_with_temperature(logits, temperature)?;
    for (t, q) in p.iter_mut().enumerate() {
        if masked(t, mask_unk) {
            *q = 0.0;
        }
    }
    let z: f64 = p.iter().sum();
    if !(z > 0.0) {
        return Err(Error::NonFinite("no probability mass left after masking".into()));
    }
    p.iter_mut().for_each(|q| *q /= z);
    Ok(p)
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>()
}

/// Highest-scoring allowed id; ties go to the lowest id.
fn argmax_allowed(logits: &[f64], mask_unk: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (t, &l) in logits.iter().enumerate() {
        if masked(t, mask_unk) {
            continue;
        }
        if best.is_none_or(|b| l > logits[b]) {
            best = Some(t);
        }
    }
    best
}

fn decode<M, F>(model: &M, contexts: &[usize], max_len: usize, mut choose: F) -> Result<GeneratedText>
where
    M: StepModel,
    F: FnMut(&[f64]) -> Result<usize>,
{
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut state = model.start(contexts)?;
    let mut prev = BOS;
    let mut out = GeneratedText {
        tokens: Vec::new(),
        text: String::new(),
        contexts: contexts.to_vec(),
        step_probs: Vec::new(),
        logprob: 0.0,
        terminated_by: Termination::MaxLen,
        gate_means: None,
    };
    let mut gates = Vec::new();
    while out.tokens.len() < max_len {
        let (next, logits, gate) = model.advance(&state, prev)?;
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("non-finite logits during decoding".into()));
        }
        let token = choose(&logits)?;
        let lp = log_softmax(&logits)[token];
        out.tokens.push(token);
        out.step_probs.push(lp.exp());
        out.logprob += lp;
        gates.extend(gate);
        state = next;
        prev = token;
        if token == EOS {
            out.terminated_by = Termination::Eos;
            break;
        }
    }
    if !gates.is_empty() {
        out.gate_means = Some(gates);
    }
    Ok(out)
}

/// Ancestral sampling at `config.temperature`.
pub fn sample_sequence<M: StepModel>(
    model: &M,
    contexts: &[usize],
    config: &SamplingConfig,
    rng: &mut Rng,
) -> Result<GeneratedText> {
    config.validate()?;
    decode(model, contexts, config.max_len, |logits| {
        let p = sampling_distribution(logits, config.temperature, config.mask_unk)?;
        sample_categorical(&p, rng)
    })
}

pub fn greedy_decode<M: StepModel>(model: &M, contexts: &[usize], max_len: usize, mask_unk: bool) -> Result<GeneratedText> {
    decode(model, contexts, max_len, |logits| {
        argmax_allowed(logits, mask_unk).ok_or_else(|| Error::invalid("vocabulary has no emittable token"))
    })
}

struct Hypothesis<S> {
    state: S,
    tokens: Vec<usize>,
    step_probs: Vec<f64>,
    gates: Vec<f64>,
    logprob: f64,
}

impl<S> Hypothesis<S> {
    fn finish(self, contexts: &[usize], terminated_by: Termination) -> GeneratedText {
        GeneratedText {
            tokens: self.tokens,
            text: String::new(),
            contexts: contexts.to_vec(),
            step_probs: self.step_probs,
            logprob: self.logprob,
            terminated_by,
            gate_means: (!self.gates.is_empty()).then_some(self.gates),
        }
    }
}

/// Beam search over summed log-probabilities, without length normalisation.
///
/// Each step keeps the `beam_width` best extensions of the live hypotheses;
/// extensions ending in EOS are moved to the finished pool. Ties are broken
/// by hypothesis rank, then token id. Returns at most `beam_width` results
/// sorted by descending log-probability.
pub fn beam_search<M: StepModel>(
    model: &M,
    contexts: &[usize],
    beam_width: usize,
    max_len: usize,
    mask_unk: bool,
) -> Result<Vec<GeneratedText>> {
    if beam_width == 0 {
        return Err(Error::invalid("beam_width must be at least 1"));
    }
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut live = vec![Hypothesis {
        state: model.start(contexts)?,
        tokens: Vec::new(),
        step_probs: Vec::new(),
        gates: Vec::new(),
        logprob: 0.0,
    }];
    let mut finished: Vec<GeneratedText> = Vec::new();

    for _ in 0..max_len {
        // (score, hypothesis rank, token, log-prob, next state, gate)
        let mut candidates = Vec::new();
        for (rank, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (next, logits, gate) = model.advance(&hyp.state, prev)?;
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(Error::NonFinite("non-finite logits during decoding".into()));
            }
            for (token, lp) in log_softmax(&logits).into_iter().enumerate() {
                if masked(token, mask_unk) || lp == f64::NEG_INFINITY {
                    continue;
                }
                candidates.push((hyp.logprob + lp, rank, token, lp, next.clone(), gate));
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(beam_width);

        let mut next_live = Vec::with_capacity(beam_width);
        for (score, rank, token, lp, state, gate) in candidates {
            let parent = &live[rank];
            let mut hyp = Hypothesis {
                state,
                tokens: parent.tokens.clone(),
                step_probs: parent.step_probs.clone(),
                gates: parent.gates.clone(),
                logprob: score,
            };
            hyp.tokens.push(token);
            hyp.step_probs.push(lp.exp());
            hyp.gates.extend(gate);
            if token == EOS {
                finished.push(hyp.finish(contexts, Termination::Eos));
            } else {
                next_live.push(hyp);
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
        // Scores only decrease, so a full pool that beats every live
        // hypothesis is final.
        if finished.len() >= beam_width {
            let mut scores: Vec<f64> = finished.iter().map(|g| g.logprob).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            if live.iter().all(|h| h.logprob < scores[beam_width - 1]) {
                live.clear();
                break;
            }
        }
    }
    finished.extend(live.into_iter().map(|h| h.finish(contexts, Termination::MaxLen)));
    // Stable sort keeps discovery order among equal scores.
    finished.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    finished.truncate(beam_width);
    Ok(finished)
}

/// One line of the samples file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub rating: Option<String>,
    pub product: Option<String>,
    pub text: String,
    pub logprob: f64,
    pub terminated_by: Termination,
}

impl SampleRecord {
    pub fn new(generated: &GeneratedText, schema: &ContextSchema) -> Self {
        let value = |name: &str| {
            schema
                .position(name)
                .and_then(|i| Some(schema.types()[i].values[*generated.contexts.get(i)?].clone()))
        };
        Self {
            rating: value(ContextSchema::RATING),
            product: value(ContextSchema::PRODUCT),
            text: generated.text.clone(),
            logprob: generated.logprob,
            terminated_by: generated.terminated_by,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ContextSchema, Example};
    use crate::model::{Mode, ModelConfig, Variant};
    use crate::numerics::{ParamKind, Stream};
    use proptest::prelude::*;
    use crate::numerics::Rng;

    /// Bigram table: the next-token distribution depends on the previous
    /// token only.
    struct Table {
        probs: Vec<Vec<f64>>,
    }

    impl StepModel for Table {
        type State = ();

        fn vocab_size(&self) -> usize {
            self.probs.len()
        }

        fn start(&self, _: &[usize]) -> Result<()> {
            Ok(())
        }

        fn advance(&self, _: &(), token: usize) -> Result<((), Vec<f64>, Option<f64>)> {
            let logits = self.probs[token].iter().map(|p| if *p > 0.0 { p.ln() } else { -1e30 }).collect();
            Ok(((), logits, None))
        }
    }

    /// Specials plus three content tokens 4, 5, 6.
    fn toy_table() -> Table {
        let mut probs = vec![vec![0.0; 7]; 7];
        //              pad  bos  eos  unk  a    b    c
        probs[BOS] = vec![0.0, 0.0, 0.05, 0.0, 0.45, 0.3, 0.2];
        probs[4] = vec![0.0, 0.0, 0.2, 0.0, 0.1, 0.6, 0.1];
        probs[5] = vec![0.0, 0.0, 0.7, 0.0, 0.1, 0.1, 0.1];
        probs[6] = vec![0.0, 0.0, 0.25, 0.0, 0.25, 0.25, 0.25];
        for p in [PAD, EOS, UNK] {
            probs[p] = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        }
        Table { probs }
    }

    fn enumerate(table: &Table, prefix: &mut Vec<usize>, logp: f64, max_len: usize, out: &mut Vec<(Vec<usize>, f64)>) {
        if prefix.len() == max_len {
            out.push((prefix.clone(), logp));
            return;
        }
        let prev = prefix.last().copied().unwrap_or(BOS);
        let lp = log_softmax(&table.advance(&(), prev).unwrap().1);
        for t in [EOS, 4, 5, 6] {
            prefix.push(t);
            if t == EOS {
                out.push((prefix.clone(), logp + lp[t]));
            } else {
                enumerate(table, prefix, logp + lp[t], max_len, out);
            }
            prefix.pop();
        }
    }

    #[test]
    fn beam_two_matches_exhaustive_top_two() {
        let table = toy_table();
        for max_len in 1..=5 {
            let mut all = Vec::new();
            enumerate(&table, &mut Vec::new(), 0.0, max_len, &mut all);
            all.sort_by(|a, b| b.1.total_cmp(&a.1));
            let beams = beam_search(&table, &[], 2, max_len, false).unwrap();
            assert_eq!(beams.len(), 2);
            for (b, (tokens, lp)) in beams.iter().zip(&all) {
                assert_eq!(&b.tokens, tokens, "max_len {max_len}");
                assert!((b.logprob - lp).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn beam_one_is_greedy_and_sorted() {
        let table = toy_table();
        let g = greedy_decode(&table, &[], 6, false).unwrap();
        let b = beam_search(&table, &[], 1, 6, false).unwrap();
        assert_eq!(b[0].tokens, g.tokens);
        assert_eq!(g.tokens, vec![4, 5, EOS]);
        let wide = beam_search(&table, &[], 4, 6, false).unwrap();
        assert!(wide.windows(2).all(|w| w[0].logprob >= w[1].logprob));
    }

    #[test]
    fn greedy_ties_go_to_lowest_emittable_id() {
        let table = Table { probs: vec![vec![1.0 / 7.0; 7]; 7] };
        let g = greedy_decode(&table, &[], 3, false).unwrap();
        assert_eq!(g.tokens, vec![EOS]);
        let uniform = Table { probs: vec![vec![0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25]; 7] };
        assert_eq!(greedy_decode(&uniform, &[], 2, false).unwrap().tokens, vec![UNK, UNK]);
        assert_eq!(greedy_decode(&uniform, &[], 2, true).unwrap().tokens, vec![4, 4]);
    }

    fn small_model(variant: Variant, seed: u64) -> Model {
        let schema = ContextSchema::with_cardinalities(&[2, 3]).unwrap();
        let mut model = Model::new(ModelConfig::new(variant, 12, 6, 3, schema)).unwrap();
        let mut rng = Rng::new(seed, 9);
        for t in model.params_mut().values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = rng.uniform_range(-1.0, 1.0));
        }
        model
    }

    #[test]
    fn zero_model_greedy_picks_lowest_non_reserved() {
        let schema = ContextSchema::with_cardinalities(&[2, 3]).unwrap();
        let model = Model::new(ModelConfig::new(Variant::Gc2s, 12, 4, 3, schema)).unwrap();
        let g = greedy_decode(&model, &[0, 0], 5, false).unwrap();
        assert_eq!(g.tokens, vec![EOS]);
        assert_eq!(g.terminated_by, Termination::Eos);
    }

    #[test]
    fn eos_certain_model_yields_empty_text() {
        let schema = ContextSchema::with_cardinalities(&[2, 3]).unwrap();
        let mut model = Model::new(ModelConfig::new(Variant::C2s, 12, 4, 3, schema)).unwrap();
        model.params_mut().by_name_mut("output.bias").unwrap().data_mut()[EOS] = 50.0;
        let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::build(words.iter().map(String::as_str), 12).unwrap();
        let g = sample_sequence(&model, &[1, 2], &SamplingConfig::default(), &mut Rng::for_stream(1, Stream::Sampling))
            .unwrap()
            .render(&vocab);
        assert_eq!(g.tokens, vec![EOS]);
        assert_eq!(g.text, "");
        assert_eq!(g.terminated_by, Termination::Eos);
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let model = small_model(Variant::Gc2s, 3);
        let cfg = SamplingConfig { temperature: 1.5, max_len: 7, ..SamplingConfig::default() };
        let run = |seed| {
            let mut rng = Rng::for_stream(seed, Stream::Sampling);
            (0..20).map(|_| sample_sequence(&model, &[1, 0], &cfg, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        let a = run(4);
        assert_eq!(a, run(4));
        for g in &a {
            assert!(g.tokens.len() <= 7);
            assert!(!g.tokens.iter().any(|&t| t == PAD || t == BOS));
            match g.terminated_by {
                Termination::Eos => assert_eq!(g.tokens.last(), Some(&EOS)),
                Termination::MaxLen => {
                    assert_eq!(g.tokens.len(), 7);
                    assert!(!g.tokens.contains(&EOS));
                }
            }
            assert_eq!(g.gate_means.as_ref().unwrap().len(), g.tokens.len());
        }
    }

    #[test]
    fn step_probabilities_multiply_to_sequence_probability() {
        for variant in [Variant::Rnn, Variant::C2s, Variant::Gc2s] {
            let model = small_model(variant, 7);
            let cfg = SamplingConfig { temperature: 0.9, max_len: 12, ..SamplingConfig::default() };
            let mut rng = Rng::for_stream(2, Stream::Sampling);
            for _ in 0..10 {
                let g = sample_sequence(&model, &[0, 2], &cfg, &mut rng).unwrap();
                let product: f64 = g.step_probs.iter().product();
                assert!((product - g.logprob.exp()).abs() < 1e-9);
                if g.terminated_by == Termination::Eos {
                    let mut tokens = vec![BOS];
                    tokens.extend(&g.tokens);
                    let f = model.forward_sequence(&Example::new(tokens, vec![0, 2]), Mode::Eval, None).unwrap();
                    assert!((-f.loss - g.logprob).abs() < 1e-9);
                }
            }
        }
    }

    fn mean_entropy(model: &Model, t: f64) -> (f64, usize) {
        let cfg = SamplingConfig { temperature: t, max_len: 30, ..SamplingConfig::default() };
        let mut rng = Rng::for_stream(3, Stream::Sampling);
        let (mut total, mut steps) = (0.0, 0);
        while steps < 200 {
            let g = sample_sequence(model, &[1, 1], &cfg, &mut rng).unwrap();
            let mut state = model.start(&[1, 1]).unwrap();
            let mut prev = BOS;
            for &tok in &g.tokens {
                let (next, logits, _) = model.advance(&state, prev).unwrap();
                total += entropy(&sampling_distribution(&logits, t, false).unwrap());
                steps += 1;
                state = next;
                prev = tok;
            }
        }
        (total / steps as f64, steps)
    }

    #[test]
    fn entropy_grows_with_temperature() {
        let model = small_model(Variant::Gc2s, 5);
        let (hot, n_hot) = mean_entropy(&model, 1.0);
        let (cold, n_cold) = mean_entropy(&model, 0.5);
        assert!(n_hot >= 100 && n_cold >= 100);
        assert!(hot >= cold, "{hot} < {cold}");
    }

    #[test]
    fn greedy_matches_sampling_on_confident_model() {
        let schema = ContextSchema::with_cardinalities(&[2, 3]).unwrap();
        let mut model = Model::new(ModelConfig::new(Variant::C2s, 12, 4, 3, schema)).unwrap();
        let p = model.params_mut();
        let id = p.id("output.bias").unwrap();
        assert_eq!(p.kind(id), ParamKind::Bias);
        p.value_mut(id).data_mut()[7] = 20.0;
        let g = greedy_decode(&model, &[0, 0], 5, false).unwrap();
        let cfg = SamplingConfig { max_len: 5, ..SamplingConfig::default() };
        let s = sample_sequence(&model, &[0, 0], &cfg, &mut Rng::new(0, 0)).unwrap();
        assert!(g.step_probs.iter().all(|&p| p >= 0.99));
        assert_eq!(g.tokens, s.tokens);
        assert_eq!(g.tokens, vec![7; 5]);
        assert_eq!(g.terminated_by, Termination::MaxLen);
    }

    #[test]
    fn sample_record_names_context_values() {
        let schema = ContextSchema::new(vec![
            crate::corpus::ContextType::new("rating", (1..=5).map(|r| r.to_string()).collect()),
            crate::corpus::ContextType::new("product", vec!["B01".into(), "B02".into()]),
        ])
        .unwrap();
        let g = GeneratedText {
            tokens: vec![EOS],
            text: "great".into(),
            contexts: vec![4, 1],
            step_probs: vec![1.0],
            logprob: 0.0,
            terminated_by: Termination::Eos,
            gate_means: None,
        };
        let rec = SampleRecord::new(&g, &schema);
        assert_eq!(rec.rating.as_deref(), Some("5"));
        assert_eq!(rec.product.as_deref(), Some("B02"));
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("\"terminated_by\":\"eos\""));
    }

    proptest! {
        #[test]
        fn masked_distribution_is_valid(logits in proptest::collection::vec(-20.0f64..20.0, 6..20), t in 0.05f64..4.0) {
            let p = sampling_distribution(&logits, t, true).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(p[PAD], 0.0);
            prop_assert_eq!(p[BOS], 0.0);
            prop_assert_eq!(p[UNK], 0.0);
        }
    }
}
