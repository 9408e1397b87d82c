//! SGD training: uniform init, per-token averaged batch loss, global-norm
//! clipping, and halving the learning rate whenever validation perplexity
//! fails to improve.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, FORMAT_VERSION};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{make_batches, Example, DEFAULT_BUCKET_WIDTH};
use crate::error::{Error, Result};
use crate::model::{Mode, Model, ModelConfig};
use crate::numerics::{clip_global_norm, ParamKind, ParamStore, Rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    /// Compare with the previous epoch only.
    #[default]
    Adjacent,
    /// Compare with the best perplexity seen so far.
    BestSoFar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub clip_threshold: f64,
    /// Weights start in `U(−init_range, init_range)`.
    pub init_range: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub dropout: f64,
    pub hidden_size: usize,
    pub bucket_width: usize,
    /// Training stops once the learning rate falls below this.
    pub min_lr: f64,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            initial_lr: 1.0,
            clip_threshold: 5.0,
            init_range: 0.1,
            max_epochs: 10,
            seed: 1,
            dropout: 0.5,
            hidden_size: 512,
            bucket_width: DEFAULT_BUCKET_WIDTH,
            min_lr: 1e-6,
            lr_schedule: LrSchedule::Adjacent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden_size == 0 || self.bucket_width == 0 {
            return Err(Error::invalid("batch size, hidden size and bucket width must be positive"));
        }
        for (name, v) in [
            ("learning rate", self.initial_lr),
            ("clip threshold", self.clip_threshold),
            ("init range", self.init_range),
            ("minimum learning rate", self.min_lr),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean per-token training loss (train mode, so with dropout).
    pub train_loss: f64,
    pub valid_perplexity: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Whether the rate was halved for the next epoch.
    pub lr_halved: bool,
    pub clipped_batches: usize,
    pub batches: usize,
    /// Not written to the epoch log, which must be byte-reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub tokens: usize,
    pub batches: usize,
    pub clipped_batches: usize,
    /// Pre-clip global gradient norm of each batch.
    pub grad_norms: Vec<f64>,
}

/// Weights from `U(−range, range)` drawn off `rng`, biases zero.
pub fn init_params(params: &mut ParamStore, range: f64, rng: &mut Rng) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let kind = params.kind(id);
        for x in params.value_mut(id).data_mut() {
            *x = match kind {
                ParamKind::Weight => rng.uniform_range(-range, range),
                ParamKind::Bias => 0.0,
            };
        }
    }
}

/// `θ ← θ − lr·∇θ`. Nothing is written if any updated value would be non-finite.
pub fn sgd_step(params: &mut ParamStore, lr: f64) -> Result<()> {
    for (name, (v, g)) in params.names().iter().zip(params.values().iter().zip(params.grads())) {
        if v.data().iter().zip(g.data()).any(|(x, d)| !(x - lr * d).is_finite()) {
            return Err(Error::NonFinite(format!("update of {name}")));
        }
    }
    let (values, grads) = params.update_parts();
    for (v, g) in values.iter_mut().zip(grads) {
        for (x, d) in v.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * d;
        }
    }
    Ok(())
}

fn tag_batch(err: Error, batch: usize) -> Error {
    match err {
        Error::NonFinite(what) => Error::NonFinite(format!("batch {batch}: {what}")),
        other => other,
    }
}

/// One pass over `data`: for every batch, train-mode forward and backward
/// with the loss averaged over the batch's target tokens, global-norm
/// clipping, then one SGD step. Batch order comes from the batching stream
/// keyed by `epoch`, so it does not depend on earlier epochs.
pub fn run_epoch(
    model: &mut Model,
    data: &[Example],
    config: &TrainConfig,
    lr: f64,
    epoch: usize,
    dropout_rng: &mut Rng,
) -> Result<EpochStats> {
    let mut batch_rng = Rng::for_stream_indexed(config.seed, Stream::Batching, epoch as u32);
    let batches = make_batches(data, config.batch_size, config.bucket_width, &mut batch_rng)?;
    let mut stats = EpochStats::default();
    let mut total_loss = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        let tokens = batch.num_targets();
        if tokens == 0 {
            continue;
        }
        let scale = 1.0 / tokens as f64;
        model.params_mut().zero_grads();
        for r in 0..batch.len() {
            let ex = batch.example(r);
            let fwd = model
                .forward_sequence(&ex, Mode::Train, Some(dropout_rng))
                .map_err(|e| tag_batch(e, b))?;
            model
                .backward_sequence(&ex, &fwd, scale)
                .map_err(|e| tag_batch(e, b))?;
            total_loss += fwd.loss;
        }
        let norm = model.params().grad_norm();
        let factor =
            clip_global_norm(model.params_mut(), config.clip_threshold).map_err(|e| tag_batch(e, b))?;
        if factor < 1.0 {
            stats.clipped_batches += 1;
        }
        log::debug!(
            "batch {b}: grad norm {norm:.6} -> {:.6}",
            model.params().grad_norm()
        );
        stats.grad_norms.push(norm);
        sgd_step(model.params_mut(), lr).map_err(|e| tag_batch(e, b))?;
        stats.tokens += tokens;
        stats.batches += 1;
    }
    stats.mean_loss = if stats.tokens > 0 {
        total_loss / stats.tokens as f64
    } else {
        0.0
    };
    Ok(stats)
}

/// Learning rate for the next epoch given the validation perplexities so
/// far: halved when the latest is not less than the reference (previous
/// epoch, or best earlier epoch), otherwise unchanged.
pub fn update_lr(history: &[f64], lr: f64, schedule: LrSchedule) -> f64 {
    let Some((&last, earlier)) = history.split_last() else {
        return lr;
    };
    let reference = match schedule {
        LrSchedule::Adjacent => earlier.last().copied(),
        LrSchedule::BestSoFar => earlier.iter().copied().reduce(f64::min),
    };
    match reference {
        Some(r) if last >= r => lr / 2.0,
        _ => lr,
    }
}

/// Token-averaged eval-mode loss over `data`.
pub fn mean_loss(model: &Model, data: &[Example]) -> Result<f64> {
    let mut loss = 0.0;
    let mut tokens = 0;
    for ex in data {
        let f = model.forward_sequence(ex, Mode::Eval, None)?;
        loss += f.loss;
        tokens += f.num_targets();
    }
    if tokens == 0 {
        return Err(Error::invalid("no tokens to score"));
    }
    Ok(loss / tokens as f64)
}

/// Model plus the optimizer state needed to continue training exactly.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub valid_history: Vec<f64>,
    dropout_rng: Rng,
}

impl Trainer {
    /// Fresh model initialised from the init stream of `config.seed`.
    /// `model_config` must agree with `config` on hidden size and dropout.
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model_config.hidden_size != config.hidden_size || model_config.dropout != config.dropout {
            return Err(Error::invalid(
                "model and training configs disagree on hidden size or dropout",
            ));
        }
        let mut model = Model::new(model_config)?;
        init_params(
            model.params_mut(),
            config.init_range,
            &mut Rng::for_stream(config.seed, Stream::Init),
        );
        Ok(Trainer {
            model,
            lr: config.initial_lr,
            dropout_rng: Rng::for_stream(config.seed, Stream::Dropout),
            config,
            epoch: 0,
            valid_history: Vec::new(),
        })
    }

    pub fn should_stop(&self) -> bool {
        self.epoch >= self.config.max_epochs || self.lr < self.config.min_lr
    }

    /// Trains one epoch, scores `valid` and applies the learning-rate rule.
    pub fn train_epoch(&mut self, train: &[Example], valid: &[Example]) -> Result<EpochReport> {
        let start = Instant::now();
        let lr = self.lr;
        let stats = run_epoch(
            &mut self.model,
            train,
            &self.config,
            lr,
            self.epoch,
            &mut self.dropout_rng,
        )?;
        let valid_perplexity = mean_loss(&self.model, valid)?.exp();
        self.valid_history.push(valid_perplexity);
        self.lr = update_lr(&self.valid_history, lr, self.config.lr_schedule);
        self.epoch += 1;
        Ok(EpochReport {
            epoch: self.epoch,
            train_loss: stats.mean_loss,
            valid_perplexity,
            lr,
            lr_halved: self.lr < lr,
            clipped_batches: stats.clipped_batches,
            batches: stats.batches,
            wall_time_secs: start.elapsed().as_secs_f64(),
        })
    }

    pub fn checkpoint(&self, vocab_fingerprint: &str) -> Checkpoint {
        Checkpoint::new(
            &self.model,
            self.config.clone(),
            self.epoch,
            self.lr,
            self.valid_history.clone(),
            vec![("dropout".to_string(), self.dropout_rng.state())],
            vocab_fingerprint.to_string(),
        )
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let dropout_rng = match ckpt.header.rng.iter().find(|(name, _)| name == "dropout") {
            Some((_, state)) => Rng::from_state(state)?,
            None => return Err(Error::Corrupt("missing dropout rng state".into())),
        };
        let h = ckpt.header;
        Ok(Trainer {
            model: ckpt.model,
            config: h.train,
            epoch: h.epoch,
            lr: h.lr,
            valid_history: h.valid_history,
            dropout_rng,
        })
    }
}
