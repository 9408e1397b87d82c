//! The `ctxgen` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! Every subcommand reads and validates its inputs before creating or
//! overwriting any output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    load_raw, split_dataset, tokenize_records, ContextSchema, ContextType, Example, LoadOptions, RawCorpus, Record,
    Vocabulary,
};
use crate::evaluation::{
    classify_corpus, gate_attribution, perplexity, train_ngram_classifier, ClassifierConfig, FeatureMode, LabeledText,
    DEFAULT_LENGTH_BUCKET,
};
use crate::generation::{beam_search, greedy_decode, sample_sequence, SampleRecord, SamplingConfig, DEFAULT_TEMPERATURE};
use crate::model::{Model, ModelConfig, Variant};
use crate::numerics::{Rng, Stream};
use crate::synthetic::review_corpus;
use crate::training::{load_checkpoint, save_checkpoint, Checkpoint, EpochReport, LrSchedule, TrainConfig, Trainer};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const DEFAULT_VOCAB_SIZE: usize = 20_000;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EPOCH_LOG_FILE: &str = "epochs.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Placeholder context for the unconditioned baseline, which still carries
/// (unused) context parameters.
const NO_CONTEXT: &str = "none";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(Error::NonFinite(_)) => EXIT_NUMERIC,
            CliError::Lib(Error::InvalidArgument(_) | Error::RequiresGated(_)) => EXIT_USAGE,
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "ctxgen", version, about = "Context-conditioned LSTM text generation (C2S / gC2S)")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary of the most frequent words in a corpus.
    BuildVocab(BuildVocabArgs),
    /// Train a model; writes a manifest, an epoch log and checkpoints.
    Train(TrainArgs),
    /// Generate text for given contexts from a checkpoint.
    Sample(SampleArgs),
    /// Perplexity report, overall and by review length.
    Eval(EvalArgs),
    /// Rank tokens by mean gate activation (gC2S only).
    InspectGates(GatesArgs),
    /// Train and score an n-gram logistic-regression real/fake detector.
    Detect(DetectArgs),
    /// Write a toy review corpus for trying out the pipeline.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// JSONL corpus of {"text", "rating", "product"} records.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Total vocabulary size, special tokens included.
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop records with more words than this (0 keeps everything).
    #[arg(long, default_value_t = 100)]
    pub max_words: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleArg {
    /// Halve when validation perplexity is not below the previous epoch's.
    Adjacent,
    /// Halve when it is not below the best so far.
    BestSoFar,
}

impl From<ScheduleArg> for LrSchedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Adjacent => LrSchedule::Adjacent,
            ScheduleArg::BestSoFar => LrSchedule::BestSoFar,
        }
    }
}

/// Everything that determines a training run besides its input files.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainSettings {
    /// rnn, c2s or gc2s.
    #[arg(long, default_value = "gc2s")]
    pub variant: Variant,
    /// Comma-separated contexts: sentiment, product, both or none.
    #[arg(long, value_delimiter = ',', default_value = "sentiment,product")]
    pub contexts: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    /// Global gradient-norm clipping threshold.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// LSTM hidden size N (also the word embedding size).
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    /// Embedding size of each context.
    #[arg(long, default_value_t = 64)]
    pub context_dim: usize,
    /// Weights are initialised uniformly in (-init, init).
    #[arg(long, default_value_t = 0.1)]
    pub init: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Drop records with more words than this (0 keeps everything).
    #[arg(long, default_value_t = 100)]
    pub max_words: usize,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Adjacent)]
    pub lr_schedule: ScheduleArg,
    #[arg(long, default_value_t = 1e-6)]
    pub min_lr: f64,
    /// Length-bucket width used when batching.
    #[arg(long, default_value_t = 10)]
    pub bucket_width: usize,
    /// Drop records with out-of-vocabulary words instead of mapping them to <unk>.
    #[arg(long)]
    pub drop_unknown: bool,
    /// One recurrent matrix shared by all four LSTM gates.
    #[arg(long)]
    pub shared_recurrent: bool,
    /// Also seed the initial cell state with the context embedding.
    #[arg(long)]
    pub context_seeds_cell: bool,
    /// gC2S only: start from a zero hidden state instead of h_C.
    #[arg(long)]
    pub no_gated_initial_state: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "replay")]
    pub corpus: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    pub vocab: Option<PathBuf>,
    /// Output directory (taken from the manifest when replaying).
    #[arg(long, required_unless_present = "replay")]
    pub out_dir: Option<PathBuf>,
    /// Re-run exactly the configuration recorded in a manifest; other
    /// settings flags are ignored.
    #[arg(long, conflicts_with_all = ["corpus", "vocab", "resume"])]
    pub replay: Option<PathBuf>,
    /// Continue from a checkpoint up to --epochs total epochs. The model and
    /// optimiser settings come from the checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub settings: TrainSettings,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    /// Threads used for evaluation and sampling; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Star rating context value (1-5).
    #[arg(long)]
    pub rating: Option<String>,
    /// Product id context value.
    #[arg(long)]
    pub product: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    /// Maximum generated tokens, EOS included.
    #[arg(long, default_value_t = crate::generation::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Never emit <unk>.
    #[arg(long)]
    pub mask_unk: bool,
    /// Deterministic argmax decoding instead of sampling.
    #[arg(long, conflicts_with = "beam")]
    pub greedy: bool,
    /// Beam search with this width; writes the ranked beams.
    #[arg(long)]
    pub beam: Option<usize>,
    /// JSONL output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Which part of the corpus to score. The split is recomputed from the
    /// checkpoint's seed, so --max-words and --drop-unknown must match training.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 100)]
    pub max_words: usize,
    #[arg(long)]
    pub drop_unknown: bool,
    /// JSON report path; the text table goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Width of the review-length buckets, in words.
    #[arg(long, default_value_t = DEFAULT_LENGTH_BUCKET)]
    pub bucket_width: usize,
}

#[derive(Debug, Args)]
pub struct GatesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Only report tokens seen at least this often.
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Real texts: JSONL with a "text" field, or plain lines.
    #[arg(long)]
    pub real: PathBuf,
    /// Generated texts, same formats.
    #[arg(long)]
    pub fake: PathBuf,
    /// Fraction of each class held out for scoring.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
    /// Use n-gram counts instead of presence features.
    #[arg(long)]
    pub counts: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub out_dir: PathBuf,
    pub epoch_log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

/// Written before training starts; `train --replay` reruns it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub settings: TrainSettings,
    pub seed: u64,
    /// Named random streams derived from `seed`.
    pub streams: BTreeMap<String, u64>,
    pub corpus: InputFile,
    pub vocab: InputFile,
    pub resumed_from: Option<InputFile>,
    pub artifacts: Artifacts,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn input_file(path: &Path) -> CliResult<InputFile> {
    Ok(InputFile { path: path.to_path_buf(), sha256: sha256_file(path)? })
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()).into())
}

fn load_options(max_words: usize) -> LoadOptions {
    LoadOptions { max_words: (max_words > 0).then_some(max_words) }
}

/// Context field names from the `--contexts` flag.
fn context_fields(contexts: &[String]) -> CliResult<Vec<&'static str>> {
    let mut out = Vec::new();
    for c in contexts.iter().map(|c| c.trim().to_ascii_lowercase()) {
        let add: &[&'static str] = match c.as_str() {
            "sentiment" | "rating" => &[ContextSchema::RATING],
            "product" => &[ContextSchema::PRODUCT],
            "both" => &[ContextSchema::RATING, ContextSchema::PRODUCT],
            "none" | "" => &[],
            other => return Err(usage(format!("unknown context {other:?}; use sentiment, product, both or none"))),
        };
        for f in add {
            if !out.contains(f) {
                out.push(*f);
            }
        }
    }
    Ok(out)
}

fn placeholder_schema() -> ContextSchema {
    ContextSchema::new(vec![ContextType::anonymous(NO_CONTEXT, 1)]).expect("valid placeholder schema")
}

fn resolve_records(raw: &RawCorpus, schema: &ContextSchema, variant: Variant) -> CliResult<Vec<Record>> {
    if variant.uses_context() {
        return Ok(raw.resolve(schema)?);
    }
    Ok(raw
        .records
        .iter()
        .map(|r| Record { line: r.line, text: r.text.clone(), contexts: vec![0] })
        .collect())
}

fn load_examples(
    corpus: &Path,
    vocab: &Vocabulary,
    schema: &ContextSchema,
    variant: Variant,
    max_words: usize,
    drop_unknown: bool,
) -> CliResult<Vec<Example>> {
    let raw = load_raw(corpus, load_options(max_words))?;
    let records = resolve_records(&raw, schema, variant)?;
    let (examples, dropped) = tokenize_records(&records, vocab, drop_unknown);
    if dropped > 0 {
        log::info!("dropped {dropped} record(s) with out-of-vocabulary words");
    }
    Ok(examples)
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    if workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| usage(format!("cannot start {workers} worker(s): {e}")))?
        .install(f)
}

fn cmd_build_vocab(args: BuildVocabArgs) -> CliResult {
    if args.size <= crate::corpus::NUM_SPECIALS {
        return Err(usage(format!("--size must exceed the {} special tokens", crate::corpus::NUM_SPECIALS)));
    }
    let raw = load_raw(&args.corpus, load_options(args.max_words))?;
    if raw.records.is_empty() {
        return Err(Error::Data(format!("{} contains no usable records", args.corpus.display())).into());
    }
    let vocab = Vocabulary::build(raw.records.iter().map(|r| r.text.as_str()), args.size)?;
    write_file(&args.out, vocab.to_file_string().as_bytes())?;
    log::info!("wrote {} tokens to {}", vocab.len(), args.out.display());
    Ok(())
}

fn train_config(s: &TrainSettings) -> TrainConfig {
    TrainConfig {
        batch_size: s.batch_size,
        initial_lr: s.lr,
        clip_threshold: s.clip,
        init_range: s.init,
        max_epochs: s.epochs,
        seed: s.seed,
        dropout: s.dropout,
        hidden_size: s.hidden,
        bucket_width: s.bucket_width,
        min_lr: s.min_lr,
        lr_schedule: s.lr_schedule.into(),
    }
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:03}.ckpt"))
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let (mut settings, corpus, vocab_path, out_dir, resume) = match &args.replay {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let m: RunManifest =
                serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            for input in [&m.corpus, &m.vocab].into_iter().chain(&m.resumed_from) {
                if sha256_file(&input.path)? != input.sha256 {
                    return Err(Error::Data(format!("{} changed since the manifest was written", input.path.display()))
                        .into());
                }
            }
            let out_dir = args.out_dir.clone().unwrap_or(m.artifacts.out_dir);
            (m.settings, m.corpus.path, m.vocab.path, out_dir, m.resumed_from.map(|r| r.path))
        }
        None => (
            args.settings.clone(),
            args.corpus.clone().ok_or_else(|| usage("--corpus is required"))?,
            args.vocab.clone().ok_or_else(|| usage("--vocab is required"))?,
            args.out_dir.clone().ok_or_else(|| usage("--out-dir is required"))?,
            args.resume.clone(),
        ),
    };

    let mut fields = context_fields(&settings.contexts)?;
    if settings.variant == Variant::Rnn {
        if !fields.is_empty() {
            log::warn!("--variant rnn ignores --contexts {}", settings.contexts.join(","));
        }
        fields.clear();
        settings.contexts = vec!["none".into()];
    } else if fields.is_empty() {
        return Err(usage(format!("--variant {} needs at least one context", settings.variant)));
    }
    let config = train_config(&settings);
    config.validate().map_err(|e| usage(e.to_string()))?;

    let vocab = Vocabulary::load(&vocab_path)?;
    let raw = load_raw(&corpus, load_options(settings.max_words))?;
    let mut trainer = match &resume {
        Some(path) => {
            let ckpt = load_checkpoint(path, Some(&vocab))?;
            let mut t = Trainer::from_checkpoint(ckpt)?;
            t.config.max_epochs = settings.epochs;
            t
        }
        None => {
            let schema = if fields.is_empty() { placeholder_schema() } else { ContextSchema::for_reviews(&fields, &raw.records)? };
            let mut mc = ModelConfig::new(settings.variant, vocab.len(), settings.hidden, settings.context_dim, schema);
            mc.dropout = settings.dropout;
            mc.shared_recurrent = settings.shared_recurrent;
            mc.context_seeds_cell = settings.context_seeds_cell;
            mc.gated_initial_state = !settings.no_gated_initial_state;
            mc.validate().map_err(|e| usage(e.to_string()))?;
            Trainer::new(mc, config).map_err(|e| usage(e.to_string()))?
        }
    };
    let variant = trainer.model.variant();
    let records = resolve_records(&raw, trainer.model.schema(), variant)?;
    let (examples, dropped) = tokenize_records(&records, &vocab, settings.drop_unknown);
    if dropped > 0 {
        log::info!("dropped {dropped} record(s) with out-of-vocabulary words");
    }
    let split = split_dataset(examples, trainer.config.seed)?;
    log::info!(
        "{} records: {} train / {} valid / {} test",
        split.train.len() + split.valid.len() + split.test.len(),
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );

    let fingerprint = vocab.fingerprint();
    let epoch_log = out_dir.join(EPOCH_LOG_FILE);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: trainer.config.seed,
        streams: [
            ("init", Stream::Init),
            ("dropout", Stream::Dropout),
            ("batching", Stream::Batching),
            ("sampling", Stream::Sampling),
            ("split", Stream::Split),
        ]
        .into_iter()
        .map(|(n, s)| (n.to_string(), s as u64))
        .collect(),
        corpus: input_file(&corpus)?,
        vocab: input_file(&vocab_path)?,
        resumed_from: resume.as_deref().map(input_file).transpose()?,
        artifacts: Artifacts {
            out_dir: out_dir.clone(),
            epoch_log: epoch_log.clone(),
            checkpoints: (trainer.epoch + 1..=trainer.config.max_epochs)
                .map(|e| checkpoint_path(&out_dir, e))
                .chain([out_dir.join(LAST_CHECKPOINT)])
                .collect(),
        },
        settings,
    };
    write_file(&out_dir.join(MANIFEST_FILE), to_json(&manifest)?.as_bytes())?;

    // A resumed run keeps the log lines of the epochs it inherits.
    let mut log_text = String::new();
    if trainer.epoch > 0 {
        if let Ok(old) = fs::read_to_string(&epoch_log) {
            for line in old.lines() {
                let report: EpochReport = serde_json::from_str(line).map_err(|e| Error::Data(e.to_string()))?;
                if report.epoch <= trainer.epoch {
                    log_text.push_str(line);
                    log_text.push('\n');
                }
            }
        }
    }
    write_file(&epoch_log, log_text.as_bytes())?;

    while !trainer.should_stop() {
        let report = trainer.train_epoch(&split.train, &split.valid)?;
        log::info!(
            "epoch {} loss {:.4} valid ppl {:.3} lr {} clipped {}/{} ({:.1}s)",
            report.epoch,
            report.train_loss,
            report.valid_perplexity,
            report.lr,
            report.clipped_batches,
            report.batches,
            report.wall_time_secs
        );
        let line = serde_json::to_string(&report).map_err(|e| Error::Data(e.to_string()))?;
        let mut f = fs::OpenOptions::new().append(true).open(&epoch_log).map_err(|e| Error::io(&epoch_log, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&epoch_log, e))?;
        let ckpt = trainer.checkpoint(&fingerprint);
        save_checkpoint(&checkpoint_path(&out_dir, trainer.epoch), &ckpt)?;
        save_checkpoint(&out_dir.join(LAST_CHECKPOINT), &ckpt)?;
    }
    if !split.test.is_empty() {
        let report = perplexity(&trainer.model, &split.test, DEFAULT_LENGTH_BUCKET)?;
        log::info!("test perplexity {:.3}", report.perplexity);
    }
    Ok(())
}

fn load_model(checkpoint: &Path, vocab: &Path) -> CliResult<(Checkpoint, Vocabulary)> {
    let vocab = Vocabulary::load(vocab)?;
    let ckpt = load_checkpoint(checkpoint, Some(&vocab))?;
    Ok((ckpt, vocab))
}

fn sample_contexts(model: &Model, args: &SampleArgs) -> CliResult<Vec<usize>> {
    if !model.variant().uses_context() {
        if args.rating.is_some() || args.product.is_some() {
            log::warn!("the rnn baseline ignores --rating and --product");
        }
        return Ok(vec![0]);
    }
    let mut out = Vec::new();
    for t in model.schema().types() {
        let (flag, given) = match t.name.as_str() {
            ContextSchema::RATING => ("--rating", &args.rating),
            ContextSchema::PRODUCT => ("--product", &args.product),
            other => return Err(usage(format!("checkpoint has unsupported context {other}"))),
        };
        let value = given.as_ref().ok_or_else(|| usage(format!("this model needs {flag}")))?;
        let idx = t.index_of(value).ok_or_else(|| {
            let shown: Vec<&str> = t.values.iter().take(10).map(String::as_str).collect();
            usage(format!("{flag} {value:?} is not a known {} (e.g. {})", t.name, shown.join(", ")))
        })?;
        out.push(idx);
    }
    for (flag, given, name) in [
        ("--rating", &args.rating, ContextSchema::RATING),
        ("--product", &args.product, ContextSchema::PRODUCT),
    ] {
        if given.is_some() && model.schema().position(name).is_none() {
            log::warn!("model was trained without {name}; ignoring {flag}");
        }
    }
    Ok(out)
}

fn open_output(out: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Box::new(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
        }
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn cmd_sample(args: SampleArgs) -> CliResult {
    let (ckpt, vocab) = load_model(&args.checkpoint, &args.vocab)?;
    let model = ckpt.model;
    let contexts = sample_contexts(&model, &args)?;
    let config = SamplingConfig {
        temperature: args.temperature,
        max_len: args.max_len,
        seed: args.seed,
        num_samples: args.n,
        mask_unk: args.mask_unk,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    if args.beam == Some(0) {
        return Err(usage("--beam must be at least 1"));
    }
    let generated = with_workers(args.workers.workers, || {
        use rayon::prelude::*;
        if let Some(width) = args.beam {
            return Ok(beam_search(&model, &contexts, width, config.max_len, config.mask_unk)?);
        }
        if args.greedy {
            return Ok(vec![greedy_decode(&model, &contexts, config.max_len, config.mask_unk)?]);
        }
        // One indexed stream per sample keeps output independent of --workers.
        (0..config.num_samples)
            .into_par_iter()
            .map(|i| {
                let index = u32::try_from(i).map_err(|_| usage("--n is too large"))?;
                let mut rng = Rng::for_stream_indexed(config.seed, Stream::Sampling, index);
                Ok(sample_sequence(&model, &contexts, &config, &mut rng)?)
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let mut out = open_output(&args.out)?;
    let write_err = |e: std::io::Error| CliError::from(Error::io(args.out.as_deref().unwrap_or(Path::new("<stdout>")), e));
    for g in generated {
        let g = g.render(&vocab);
        let record = SampleRecord::new(&g, model.schema());
        let line = serde_json::to_string(&record).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(out, "{line}").map_err(write_err)?;
    }
    out.flush().map_err(write_err)?;
    Ok(())
}

fn select_split(args: &DataArgs, model: &Model, vocab: &Vocabulary, seed: u64) -> CliResult<Vec<Example>> {
    let examples = load_examples(&args.corpus, vocab, model.schema(), model.variant(), args.max_words, args.drop_unknown)?;
    if args.split == SplitArg::All {
        return Ok(examples);
    }
    let split = split_dataset(examples, seed)?;
    Ok(match args.split {
        SplitArg::Train => split.train,
        SplitArg::Valid => split.valid,
        _ => split.test,
    })
}

fn emit_report<T: Serialize>(report: &T, table: String, out: &Option<PathBuf>) -> CliResult {
    if let Some(path) = out {
        write_file(path, format!("{}\n", serde_json::to_string(report).map_err(|e| Error::Data(e.to_string()))?).as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    if args.bucket_width == 0 {
        return Err(usage("--bucket-width must be positive"));
    }
    let (ckpt, vocab) = load_model(&args.data.checkpoint, &args.data.vocab)?;
    let data = select_split(&args.data, &ckpt.model, &vocab, ckpt.header.train.seed)?;
    let report = with_workers(args.data.workers.workers, || Ok(perplexity(&ckpt.model, &data, args.bucket_width)?))?;
    emit_report(&report, report.to_table(), &args.data.out)
}

fn cmd_inspect_gates(args: GatesArgs) -> CliResult {
    let (ckpt, vocab) = load_model(&args.data.checkpoint, &args.data.vocab)?;
    if ckpt.model.variant() != Variant::Gc2s {
        return Err(Error::RequiresGated("inspect-gates").into());
    }
    let data = select_split(&args.data, &ckpt.model, &vocab, ckpt.header.train.seed)?;
    let report = with_workers(args.data.workers.workers, || {
        Ok(gate_attribution(&ckpt.model, &data, args.min_count, Some(&vocab))?)
    })?;
    emit_report(&report, report.to_table(), &args.data.out)
}

#[derive(Deserialize)]
struct TextLine {
    text: String,
}

/// Texts from JSONL records with a `text` field, or from plain lines.
fn read_texts(path: &Path) -> CliResult<Vec<String>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<TextLine>(l).map(|t| t.text).unwrap_or_else(|_| l.to_string()))
        .collect())
}

/// Seeded shuffle of one class, split into (train, held out).
fn holdout_split(texts: Vec<String>, fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut texts = texts;
    Rng::for_stream(seed, Stream::Split).shuffle(&mut texts);
    let held = ((texts.len() as f64 * fraction).round() as usize).clamp(1, texts.len() - 1);
    let train = texts.split_off(held);
    (train, texts)
}

fn cmd_detect(args: DetectArgs) -> CliResult {
    if !(args.holdout > 0.0 && args.holdout < 1.0) {
        return Err(usage("--holdout must be in (0, 1)"));
    }
    let real = read_texts(&args.real)?;
    let fake = read_texts(&args.fake)?;
    for (path, texts) in [(&args.real, &real), (&args.fake, &fake)] {
        if texts.len() < 2 {
            return Err(Error::Data(format!("{} needs at least two texts", path.display())).into());
        }
    }
    let classes = vec!["real".to_string(), "fake".to_string()];
    let (real_train, real_test) = holdout_split(real, args.holdout, args.seed);
    let (fake_train, fake_test) = holdout_split(fake, args.holdout, args.seed);
    let label = |texts: Vec<String>, y: usize| texts.into_iter().map(move |t| LabeledText::new(t, y));
    let train: Vec<LabeledText> = label(real_train, 0).chain(label(fake_train, 1)).collect();
    let test: Vec<LabeledText> = label(real_test, 0).chain(label(fake_test, 1)).collect();
    let config = ClassifierConfig {
        l2: args.l2,
        max_iter: args.max_iter,
        features: if args.counts { FeatureMode::Counts } else { FeatureMode::Presence },
        ..ClassifierConfig::default()
    };
    let report = with_workers(args.workers.workers, || {
        let classifier = train_ngram_classifier(&train, &classes, &config)?;
        Ok(classify_corpus(&classifier, &test)?)
    })?;
    emit_report(&report, report.to_table(), &args.out)
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    if args.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let mut text = String::new();
    for r in review_corpus(args.n, args.seed) {
        text.push_str(&serde_json::to_string(&r).map_err(|e| Error::Data(e.to_string()))?);
        text.push('\n');
    }
    write_file(&args.out, text.as_bytes())
}

pub fn execute(cli: Cli) -> CliResult {
    match cli.command {
        Command::BuildVocab(a) => cmd_build_vocab(a),
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::InspectGates(a) => cmd_inspect_gates(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
