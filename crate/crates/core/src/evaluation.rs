//! Perplexity reports, gate attribution and the n-gram logistic-regression
//! classifier used for fake-text detection and sentiment classification.
//!
//! Per-example work runs on the ambient rayon pool; results are collected
//! in input order and reduced sequentially, so reported numbers do not
//! depend on the number of workers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, Vocabulary};
use crate::model::{Mode, Model, Variant};
use crate::numerics::sigmoid;
use crate::{Error, Result};

pub const DEFAULT_LENGTH_BUCKET: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    /// Word lengths in `[lo, hi)`.
    pub lo: usize,
    pub hi: usize,
    pub examples: usize,
    pub tokens: usize,
    pub mean_loss: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub variant: Variant,
    pub contexts: Vec<String>,
    pub examples: usize,
    pub tokens: usize,
    pub mean_loss: f64,
    pub perplexity: f64,
    pub bucket_width: usize,
    pub buckets: Vec<LengthBucket>,
}

impl PerplexityReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{} [{}]  examples {}  tokens {}  perplexity {:.4}\n",
            self.variant,
            self.contexts.join("+"),
            self.examples,
            self.tokens,
            self.perplexity
        );
        let _ = writeln!(out, "{:>11}  {:>8}  {:>8}  {:>12}", "length", "examples", "tokens", "perplexity");
        for b in &self.buckets {
            let _ = writeln!(
                out,
                "{:>11}  {:>8}  {:>8}  {:>12.4}",
                format!("[{}, {})", b.lo, b.hi),
                b.examples,
                b.tokens,
                b.perplexity
            );
        }
        out
    }
}

/// Eval-mode log-losses of every example, in input order.
fn example_losses(model: &Model, data: &[Example]) -> Result<Vec<(f64, usize)>> {
    data.par_iter()
        .map(|ex| {
            let f = model.forward_sequence(ex, Mode::Eval, None)?;
            Ok((f.loss, f.num_targets()))
        })
        .collect()
}

/// Perplexity of `data`, overall and per bucket of word length.
pub fn perplexity(model: &Model, data: &[Example], bucket_width: usize) -> Result<PerplexityReport> {
    if bucket_width == 0 {
        return Err(Error::invalid("bucket width must be positive"));
    }
    if data.is_empty() {
        return Err(Error::invalid("cannot score an empty dataset"));
    }
    let losses = example_losses(model, data)?;
    let mut buckets: BTreeMap<usize, (usize, usize, f64)> = BTreeMap::new();
    let (mut total, mut tokens) = (0.0, 0);
    for (ex, &(loss, n)) in data.iter().zip(&losses) {
        total += loss;
        tokens += n;
        let b = buckets.entry(ex.word_len() / bucket_width).or_default();
        b.0 += 1;
        b.1 += n;
        b.2 += loss;
    }
    let mean_loss = total / tokens as f64;
    Ok(PerplexityReport {
        variant: model.variant(),
        contexts: model.schema().types().iter().map(|t| t.name.clone()).collect(),
        examples: data.len(),
        tokens,
        mean_loss,
        perplexity: mean_loss.exp(),
        bucket_width,
        buckets: buckets
            .into_iter()
            .map(|(k, (examples, tokens, loss))| LengthBucket {
                lo: k * bucket_width,
                hi: (k + 1) * bucket_width,
                examples,
                tokens,
                mean_loss: loss / tokens as f64,
                perplexity: (loss / tokens as f64).exp(),
            })
            .collect(),
    })
}

/// [`perplexity`] after checking that `data` was tokenized with the
/// vocabulary the model was trained on.
pub fn perplexity_checked(
    model: &Model,
    model_fingerprint: &str,
    data: &Dataset,
    bucket_width: usize,
) -> Result<PerplexityReport> {
    if data.vocab_fingerprint != model_fingerprint {
        return Err(Error::Fingerprint {
            expected: model_fingerprint.to_string(),
            found: data.vocab_fingerprint.clone(),
        });
    }
    perplexity(model, &data.examples, bucket_width)
}

/// Summed loss and count of predictions at each target position
/// (0 = the first word after BOS).
pub fn position_losses(model: &Model, data: &[Example]) -> Result<Vec<(f64, usize)>> {
    let per_example: Vec<Vec<f64>> = data
        .par_iter()
        .map(|ex| Ok(model.forward_sequence(ex, Mode::Eval, None)?.token_log_probs))
        .collect::<Result<_>>()?;
    let mut out: Vec<(f64, usize)> = Vec::new();
    for lps in per_example {
        if out.len() < lps.len() {
            out.resize(lps.len(), (0.0, 0));
        }
        for (slot, lp) in out.iter_mut().zip(lps) {
            slot.0 -= lp;
            slot.1 += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEntry {
    pub token: String,
    pub id: usize,
    pub mean_gate: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateAttributionReport {
    pub min_count: usize,
    /// Descending by mean gate value; ties by token id.
    pub entries: Vec<GateEntry>,
}

impl GateAttributionReport {
    /// 1-based rank of `id`, if it passed the count filter.
    pub fn rank_of(&self, id: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id).map(|p| p + 1)
    }

    pub fn to_table(&self) -> String {
        let width = self.entries.iter().map(|e| e.token.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:>4}  {:<width$}  {:>9}  {:>7}\n", "rank", "token", "mean gate", "count");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{:>4}  {:<width$}  {:>9.6}  {:>7}", i + 1, e.token, e.mean_gate, e.count);
        }
        out
    }
}

/// Mean gate activation per predicted token type.
///
/// Each type's values are sorted before summing, so the report does not
/// depend on the order of `data`.
pub fn gate_attribution(
    model: &Model,
    data: &[Example],
    min_count: usize,
    vocab: Option<&Vocabulary>,
) -> Result<GateAttributionReport> {
    if model.variant() != Variant::Gc2s {
        return Err(Error::RequiresGated("gate attribution"));
    }
    let traces: Vec<Vec<(usize, f64)>> = data
        .par_iter()
        .map(|ex| {
            let f = model.forward_sequence(ex, Mode::Eval, None)?;
            let trace = f.gate_trace.ok_or(Error::RequiresGated("gate attribution"))?;
            Ok(trace.steps.into_iter().map(|s| (s.token, s.mean)).collect())
        })
        .collect::<Result<_>>()?;
    let mut by_token: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (token, mean) in traces.into_iter().flatten() {
        by_token.entry(token).or_default().push(mean);
    }
    let mut entries: Vec<GateEntry> = by_token
        .into_iter()
        .filter(|(_, v)| v.len() >= min_count.max(1))
        .map(|(id, mut v)| {
            v.sort_by(f64::total_cmp);
            GateEntry {
                token: vocab.map_or_else(|| id.to_string(), |voc| voc.token(id).to_string()),
                id,
                mean_gate: v.iter().sum::<f64>() / v.len() as f64,
                count: v.len(),
            }
        })
        .collect();
    entries.sort_by(|a, b| b.mean_gate.total_cmp(&a.mean_gate).then(a.id.cmp(&b.id)));
    Ok(GateAttributionReport { min_count, entries })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// 1 if the n-gram occurs.
    #[default]
    Presence,
    Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tolerance: f64,
    pub features: FeatureMode,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { l2: 1e-3, max_iter: 20_000, tolerance: 1e-5, features: FeatureMode::Presence }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: usize,
}

impl LabeledText {
    pub fn new(text: impl Into<String>, label: usize) -> Self {
        Self { text: text.into(), label }
    }
}

fn ngrams(text: &str) -> Vec<String> {
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let mut out = words.clone();
    out.extend(words.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out
}

/// Logistic regression over unigram and bigram features: a single sigmoid
/// output for two classes (class 1 is the positive class), softmax
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramClassifier {
    pub classes: Vec<String>,
    pub features: BTreeMap<String, usize>,
    pub mode: FeatureMode,
    /// One row for binary problems, one per class otherwise.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub l2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

type Sparse = Vec<(usize, f64)>;

impl NgramClassifier {
    fn featurize(&self, text: &str) -> Sparse {
        featurize(&self.features, self.mode, text)
    }

    /// Class probabilities.
    pub fn predict_proba(&self, text: &str) -> Vec<f64> {
        let x = self.featurize(text);
        scores(&self.weights, &self.bias, &x)
    }

    /// Most probable class; ties go to the lower index.
    pub fn predict(&self, text: &str) -> usize {
        let p = self.predict_proba(text);
        let mut best = 0;
        for (k, &q) in p.iter().enumerate() {
            if q > p[best] {
                best = k;
            }
        }
        best
    }
}

fn featurize(map: &BTreeMap<String, usize>, mode: FeatureMode, text: &str) -> Sparse {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for g in ngrams(text) {
        if let Some(&i) = map.get(&g) {
            *counts.entry(i).or_default() += 1.0;
        }
    }
    counts
        .into_iter()
        .map(|(i, c)| (i, if mode == FeatureMode::Presence { 1.0 } else { c }))
        .collect()
}

fn dot(w: &[f64], x: &Sparse) -> f64 {
    x.iter().map(|&(i, v)| w[i] * v).sum()
}

fn scores(weights: &[Vec<f64>], bias: &[f64], x: &Sparse) -> Vec<f64> {
    if weights.len() == 1 {
        let p = sigmoid(dot(&weights[0], x) + bias[0]);
        return vec![1.0 - p, p];
    }
    let z: Vec<f64> = weights.iter().zip(bias).map(|(w, b)| dot(w, x) + b).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Fits by full-batch gradient descent on mean log-loss + `l2/2·‖w‖²` (bias
/// unregularised) until the gradient norm drops below the tolerance or the
/// iteration cap.
pub fn train_ngram_classifier(
    data: &[LabeledText],
    classes: &[String],
    config: &ClassifierConfig,
) -> Result<NgramClassifier> {
    let k = classes.len();
    if k < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if !(config.l2 >= 0.0 && config.l2.is_finite()) {
        return Err(Error::invalid(format!("l2 strength must be non-negative, got {}", config.l2)));
    }
    if let Some(bad) = data.iter().find(|d| d.label >= k) {
        return Err(Error::invalid(format!("label {} outside {k} classes", bad.label)));
    }
    let present: BTreeSet<usize> = data.iter().map(|d| d.label).collect();
    if present.len() < 2 {
        return Err(Error::Data(format!(
            "training data contains {} class(es); need at least two",
            present.len()
        )));
    }

    let vocab: BTreeSet<String> = data.iter().flat_map(|d| ngrams(&d.text)).collect();
    let features: BTreeMap<String, usize> = vocab.into_iter().enumerate().map(|(i, g)| (g, i)).collect();
    let xs: Vec<Sparse> = data.iter().map(|d| featurize(&features, config.features, &d.text)).collect();
    let dim = features.len();
    let rows = if k == 2 { 1 } else { k };
    let n = data.len() as f64;

    // Block step sizes: the weights and the unregularised bias have very
    // different curvature once l2 is large. Halving each block's 1/L keeps
    // the preconditioned Hessian below 1.
    let max_sq = xs.iter().map(|x| x.iter().map(|(_, v)| v * v).sum::<f64>()).fold(0.0, f64::max);
    let curvature = if k == 2 { 0.25 } else { 0.5 };
    let step_w = 0.5 / (curvature * max_sq + config.l2);
    let step_b = 0.5 / curvature;

    let mut weights = vec![vec![0.0; dim]; rows];
    let mut bias = vec![0.0; rows];
    let mut gw = vec![vec![0.0; dim]; rows];
    let mut gb = vec![0.0; rows];
    let (mut iterations, mut converged, mut grad_norm) = (0, false, f64::INFINITY);
    while iterations < config.max_iter {
        for (g, w) in gw.iter_mut().zip(&weights) {
            g.iter_mut().zip(w).for_each(|(g, w)| *g = config.l2 * w);
        }
        gb.iter_mut().for_each(|g| *g = 0.0);
        for (x, d) in xs.iter().zip(data) {
            let p = scores(&weights, &bias, x);
            for r in 0..rows {
                // Residual of the row's output: p − y.
                let target = if k == 2 { (d.label == 1) as u8 } else { (d.label == r) as u8 };
                let prob = if k == 2 { p[1] } else { p[r] };
                let resid = (prob - f64::from(target)) / n;
                gb[r] += resid;
                for &(i, v) in x {
                    gw[r][i] += resid * v;
                }
            }
        }
        grad_norm = (gw.iter().flatten().map(|g| g * g).sum::<f64>() + gb.iter().map(|g| g * g).sum::<f64>()).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("classifier gradient".into()));
        }
        if grad_norm < config.tolerance {
            converged = true;
            break;
        }
        for r in 0..rows {
            weights[r].iter_mut().zip(&gw[r]).for_each(|(w, g)| *w -= step_w * g);
            bias[r] -= step_b * gb[r];
        }
        iterations += 1;
    }
    if !converged {
        log::warn!("classifier stopped at {iterations} iterations, gradient norm {grad_norm:.3e}");
    }
    Ok(NgramClassifier {
        classes: classes.to_vec(),
        features,
        mode: config.features,
        weights,
        bias,
        l2: config.l2,
        iterations,
        converged,
        grad_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Binary rates in percent: TP and FN over the positives, TN and FP over
/// the negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryRates {
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
    pub fp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub classes: Vec<String>,
    /// `matrix[true][predicted]`.
    pub matrix: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub binary: Option<BinaryRates>,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    pct(num, den) / 100.0
}

impl ConfusionReport {
    pub fn from_predictions(classes: &[String], pairs: &[(usize, usize)]) -> Result<Self> {
        let k = classes.len();
        let mut matrix = vec![vec![0; k]; k];
        for &(truth, pred) in pairs {
            if truth >= k || pred >= k {
                return Err(Error::invalid(format!("label outside {k} classes")));
            }
            matrix[truth][pred] += 1;
        }
        let correct: usize = (0..k).map(|c| matrix[c][c]).sum();
        let per_class = (0..k)
            .map(|c| {
                let support: usize = matrix[c].iter().sum();
                let predicted: usize = matrix.iter().map(|row| row[c]).sum();
                let precision = ratio(matrix[c][c], predicted);
                let recall = ratio(matrix[c][c], support);
                let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
                ClassMetrics { class: classes[c].clone(), support, precision, recall, f1 }
            })
            .collect();
        let binary = (k == 2).then(|| {
            let (pos, neg) = (matrix[1][0] + matrix[1][1], matrix[0][0] + matrix[0][1]);
            BinaryRates {
                tp: pct(matrix[1][1], pos),
                fn_: pct(matrix[1][0], pos),
                tn: pct(matrix[0][0], neg),
                fp: pct(matrix[0][1], neg),
            }
        });
        Ok(Self {
            classes: classes.to_vec(),
            matrix,
            accuracy: ratio(correct, pairs.len()),
            per_class,
            binary,
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if let Some(b) = &self.binary {
            let _ = writeln!(out, "{:>8}  {:>8}  {:>8}  {:>8}", "TP", "FN", "TN", "FP");
            let _ = writeln!(out, "{:>7.2}%  {:>7.2}%  {:>7.2}%  {:>7.2}%", b.tp, b.fn_, b.tn, b.fp);
        }
        let width = self.classes.iter().map(String::len).max().unwrap_or(5).max(10);
        let _ = write!(out, "{:<width$}", "true\\pred");
        for c in &self.classes {
            let _ = write!(out, "  {c:>width$}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.matrix) {
            let _ = write!(out, "{c:<width$}");
            for v in row {
                let _ = write!(out, "  {v:>width$}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "precision", "recall", "f1", "support");
        for m in &self.per_class {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                m.class, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(out, "accuracy {:.4}", self.accuracy);
        out
    }
}

pub fn classify_corpus(classifier: &NgramClassifier, data: &[LabeledText]) -> Result<ConfusionReport> {
    let pairs: Vec<(usize, usize)> = data.par_iter().map(|d| (d.label, classifier.predict(&d.text))).collect();
    ConfusionReport::from_predictions(&classifier.classes, &pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ContextSchema, BOS, EOS};
    use crate::model::ModelConfig;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn zero_model(variant: Variant, v: usize) -> Model {
        let schema = ContextSchema::with_cardinalities(&[2, 3]).unwrap();
        Model::new(ModelConfig::new(variant, v, 5, 3, schema)).unwrap()
    }

    fn random_model(variant: Variant, seed: u64) -> Model {
        let mut m = zero_model(variant, 20);
        let mut rng = Rng::new(seed, 0);
        for t in m.params_mut().values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = rng.uniform_range(-0.8, 0.8));
        }
        m
    }

    fn random_data(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = Rng::new(seed, 1);
        (0..n)
            .map(|_| {
                let len = 1 + rng.below(55);
                let mut t = vec![BOS];
                t.extend((0..len).map(|_| 4 + rng.below(16)));
                t.push(EOS);
                Example::new(t, vec![rng.below(2), rng.below(3)])
            })
            .collect()
    }

    #[test]
    fn zero_model_perplexity_is_vocab_size() {
        for variant in [Variant::Rnn, Variant::C2s, Variant::Gc2s] {
            let r = perplexity(&zero_model(variant, 20), &random_data(30, 3), DEFAULT_LENGTH_BUCKET).unwrap();
            assert!((r.perplexity - 20.0).abs() < 1e-6, "{}", r.perplexity);
            assert!(r.buckets.iter().all(|b| (b.perplexity - 20.0).abs() < 1e-6));
        }
    }

    #[test]
    fn buckets_recombine_and_scoring_is_repeatable() {
        let model = random_model(Variant::Gc2s, 4);
        let data = random_data(40, 5);
        let r = perplexity(&model, &data, 20).unwrap();
        assert_eq!(r.buckets.iter().map(|b| b.tokens).sum::<usize>(), r.tokens);
        assert_eq!(r.buckets.iter().map(|b| b.examples).sum::<usize>(), 40);
        let recombined: f64 = r.buckets.iter().map(|b| b.mean_loss * b.tokens as f64).sum::<f64>() / r.tokens as f64;
        assert!((recombined - r.mean_loss).abs() < 1e-9);
        assert!((r.perplexity - r.mean_loss.exp()).abs() < 1e-12);
        assert_eq!(r, perplexity(&model, &data, 20).unwrap());
        let one = perplexity(&model, &data[..1], 20).unwrap();
        assert_eq!(one, perplexity(&model, &data[..1], 20).unwrap());
    }

    #[test]
    fn eval_perplexity_ignores_dropout_rate() {
        let a = random_model(Variant::C2s, 8);
        let mut cfg = a.config().clone();
        cfg.dropout = 0.5;
        let mut b = Model::new(cfg).unwrap();
        *b.params_mut() = a.params().clone();
        let data = random_data(10, 2);
        assert_eq!(perplexity(&a, &data, 20).unwrap().mean_loss, perplexity(&b, &data, 20).unwrap().mean_loss);
    }

    #[test]
    fn result_independent_of_worker_count() {
        let model = random_model(Variant::Gc2s, 9);
        let data = random_data(50, 9);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| perplexity(&model, &data, 20).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn fingerprint_mismatch_is_reported() {
        let ds = Dataset { vocab_fingerprint: "abc".into(), examples: random_data(2, 1) };
        let m = zero_model(Variant::C2s, 20);
        assert!(matches!(perplexity_checked(&m, "xyz", &ds, 20), Err(Error::Fingerprint { .. })));
        assert!(perplexity_checked(&m, "abc", &ds, 20).is_ok());
    }

    #[test]
    fn position_losses_sum_to_total() {
        let model = random_model(Variant::C2s, 1);
        let data = random_data(12, 6);
        let pos = position_losses(&model, &data).unwrap();
        let r = perplexity(&model, &data, 20).unwrap();
        assert_eq!(pos.iter().map(|p| p.1).sum::<usize>(), r.tokens);
        assert!((pos.iter().map(|p| p.0).sum::<f64>() / r.tokens as f64 - r.mean_loss).abs() < 1e-12);
        assert_eq!(pos[0].1, 12);
    }

    #[test]
    fn saturated_gate_attribution() {
        let mut m = zero_model(Variant::Gc2s, 20);
        m.params_mut().by_name_mut("gate.bias").unwrap().fill(50.0);
        let r = gate_attribution(&m, &random_data(10, 1), 1, None).unwrap();
        assert!(!r.entries.is_empty());
        assert!(r.entries.iter().all(|e| (e.mean_gate - 1.0).abs() < 1e-12));
        assert!(gate_attribution(&m, &random_data(10, 1), 100_000, None).unwrap().entries.is_empty());
    }

    #[test]
    fn gate_attribution_needs_gc2s_and_ignores_order() {
        let err = gate_attribution(&zero_model(Variant::C2s, 20), &random_data(2, 1), 1, None).unwrap_err();
        assert!(err.to_string().contains("requires a gC2S"));
        let m = random_model(Variant::Gc2s, 3);
        let mut data = random_data(30, 7);
        let a = gate_attribution(&m, &data, 2, None).unwrap();
        Rng::new(1, 1).shuffle(&mut data);
        assert_eq!(a, gate_attribution(&m, &data, 2, None).unwrap());
        assert!(a.entries.windows(2).all(|w| w[0].mean_gate >= w[1].mean_gate));
        assert!(a.entries.iter().all(|e| e.count >= 2));
    }

    fn classes(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn separable() -> Vec<LabeledText> {
        let fillers = ["the room", "service was", "we stayed here", "it was", "my family"];
        let mut out = Vec::new();
        for (i, f) in fillers.iter().enumerate() {
            out.push(LabeledText::new(format!("{f} good {}", i % 2), 0));
            out.push(LabeledText::new(format!("{f} bad {}", (i + 1) % 2), 1));
        }
        out
    }

    #[test]
    fn separable_corpus_is_learned_perfectly() {
        let data = separable();
        let c = train_ngram_classifier(&data, &classes(&["a", "b"]), &ClassifierConfig::default()).unwrap();
        let r = classify_corpus(&c, &data).unwrap();
        assert_eq!(r.accuracy, 1.0);
        let b = r.binary.unwrap();
        assert_eq!((b.tp, b.tn, b.fn_, b.fp), (100.0, 100.0, 0.0, 0.0));
        assert!(c.converged);
    }

    #[test]
    fn heavy_regularisation_predicts_the_prior() {
        let mut data = separable();
        data.push(LabeledText::new("extra good", 0));
        data.push(LabeledText::new("more good", 0));
        let cfg = ClassifierConfig { l2: 1e6, ..ClassifierConfig::default() };
        let c = train_ngram_classifier(&data, &classes(&["a", "b"]), &cfg).unwrap();
        assert!(c.weights[0].iter().all(|w| w.abs() < 1e-5));
        let prior = 5.0 / 12.0;
        for d in &data {
            assert_eq!(c.predict(&d.text), 0);
            assert!((c.predict_proba(&d.text)[1] - prior).abs() < 1e-4);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let data = vec![LabeledText::new("x", 0), LabeledText::new("y", 0)];
        assert!(train_ngram_classifier(&data, &classes(&["a", "b"]), &ClassifierConfig::default()).is_err());
    }

    #[test]
    fn duplicating_training_data_keeps_decisions() {
        let mut data = separable();
        data.push(LabeledText::new("good and bad", 1));
        data.push(LabeledText::new("bad but good", 0));
        let cfg = ClassifierConfig { l2: 0.05, ..ClassifierConfig::default() };
        let once = train_ngram_classifier(&data, &classes(&["a", "b"]), &cfg).unwrap();
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let twice = train_ngram_classifier(&doubled, &classes(&["a", "b"]), &cfg).unwrap();
        let probe = ["good", "bad", "good and bad", "stayed here bad", "nothing"];
        for t in probe.iter().map(|s| s.to_string()).chain(data.iter().map(|d| d.text.clone())) {
            assert_eq!(once.predict(&t), twice.predict(&t));
            assert!((once.predict_proba(&t)[1] - twice.predict_proba(&t)[1]).abs() < 1e-4);
        }
        assert_eq!(once, train_ngram_classifier(&data, &classes(&["a", "b"]), &cfg).unwrap());
    }

    #[test]
    fn five_way_sentiment() {
        let words = ["awful", "poor", "okay", "nice", "superb"];
        let mut data = Vec::new();
        for (c, w) in words.iter().enumerate() {
            for f in ["the hotel was", "food is", "staff seemed"] {
                data.push(LabeledText::new(format!("{f} {w}"), c));
            }
        }
        let names = classes(&["1", "2", "3", "4", "5"]);
        let c = train_ngram_classifier(&data, &names, &ClassifierConfig::default()).unwrap();
        assert_eq!(c.weights.len(), 5);
        let r = classify_corpus(&c, &data).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.binary.is_none());
        for (row, m) in r.matrix.iter().zip(&r.per_class) {
            assert_eq!(row.iter().sum::<usize>(), m.support);
        }
        assert!(r.to_table().contains("accuracy 1.0000"));
    }

    #[test]
    fn degenerate_confusions() {
        let names = classes(&["real", "fake"]);
        let pairs = vec![(0, 1), (0, 1), (1, 1), (1, 1), (1, 1)];
        let r = ConfusionReport::from_predictions(&names, &pairs).unwrap();
        let b = r.binary.as_ref().unwrap();
        assert_eq!((b.tp, b.fp, b.tn, b.fn_), (100.0, 100.0, 0.0, 0.0));
        assert!(r.to_table().contains("TP"));
    }

    proptest! {
        #[test]
        fn confusion_rows_match_class_counts(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let names = classes(&["a", "b", "c", "d"]);
            let r = ConfusionReport::from_predictions(&names, &pairs).unwrap();
            for c in 0..4 {
                let count = pairs.iter().filter(|p| p.0 == c).count();
                prop_assert_eq!(r.matrix[c].iter().sum::<usize>(), count);
            }
        }

        #[test]
        fn binary_rates_sum_to_hundred(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..60)) {
            let r = ConfusionReport::from_predictions(&classes(&["n", "p"]), &pairs).unwrap();
            let b = r.binary.unwrap();
            if pairs.iter().any(|p| p.0 == 1) { prop_assert!((b.tp + b.fn_ - 100.0).abs() < 1e-9); }
            if pairs.iter().any(|p| p.0 == 0) { prop_assert!((b.tn + b.fp - 100.0).abs() < 1e-9); }
        }
    }
}
