//! The four commands behind the `absa-pair` binary.
//!
//! Every stage writes into a directory named after a digest of everything that
//! determines its outputs, so reruns with the same config land in the same
//! place and overwrite it with identical bytes:
//!
//! ```text
//! <out>/prepare-<digest>/              corpus, split, vocab, expanded pairs
//! <out>/train-<mode>-<digest>/         per-epoch and final checkpoints, history
//! <out>/eval-<digest>/                 Markdown/CSV reports, per-model details
//! ```
//!
//! Each directory also receives `config.toml` (a loadable snapshot of the
//! resolved config) and `manifest.json`.

mod config;
mod manifest;

pub use config::{
    CorpusSection, EncoderSection, Overrides, PipelineConfig, SplitSection, TemplateSection, TokenizerSection,
    INIT_DOMAIN,
};
pub use manifest::{sha256_hex, FileDigest, RunManifest};

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::auxpair::{self, AuxError, AuxMode};
use crate::corpus::{self, corpus_stats, AspectInstance, Corpus, CorpusError, CorpusFormat, Polarity};
use crate::encoder::{init_params, load_checkpoint, Checkpoint, CheckpointMeta, ModelError};
use crate::evaluation::{self, render_report, EvalError, EvalReport, ReportFormat};
use crate::tokenizer::{self, TokenizerError, Vocab};
use crate::training::{self, EncodedDataset, TrainError, TrainEvent, TrainHistory};

/// Length of the hex digest prefix used in directory names.
pub const DIGEST_PREFIX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Prepare,
    Train,
    Eval,
    Predict,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Predict => "predict",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifact {0} (run `prepare` with the same config first)")]
    MissingArtifact(PathBuf),
    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("mode mismatch: checkpoint was trained for {trained}, {requested} was requested")]
    ModeMismatch { trained: AuxMode, requested: AuxMode },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Aux(#[from] AuxError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl StageError {
    pub fn at(self, stage: Stage) -> PipelineError {
        PipelineError { stage, source: self }
    }
}

/// A failure tagged with the stage that raised it.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T, E: Into<StageError>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.into().at(stage))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> StageError {
    StageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_bytes(path: &Path) -> std::result::Result<Vec<u8>, StageError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

/// Collects the files a stage writes, with their digests.
struct ArtifactWriter {
    dir: PathBuf,
    written: Vec<FileDigest>,
}

impl ArtifactWriter {
    fn create(dir: PathBuf) -> std::result::Result<Self, StageError> {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(ArtifactWriter { dir, written: Vec::new() })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> std::result::Result<PathBuf, StageError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.record(rel, bytes);
        Ok(path)
    }

    /// Registers a file some other routine already wrote.
    fn adopt(&mut self, rel: &str) -> std::result::Result<PathBuf, StageError> {
        let path = self.path(rel);
        let bytes = read_bytes(&path)?;
        self.record(rel, &bytes);
        Ok(path)
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        self.written.retain(|f| f.path != rel);
        self.written.push(FileDigest {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    fn finish(
        mut self,
        stage: &str,
        digest: &str,
        config: &PipelineConfig,
        inputs: Vec<FileDigest>,
    ) -> std::result::Result<PathBuf, StageError> {
        self.write("config.toml", config.to_toml().as_bytes())?;
        let manifest = RunManifest::new(stage, digest, config.clone(), inputs, self.written.clone());
        self.write("manifest.json", manifest.to_json().as_bytes())?;
        Ok(self.dir)
    }
}

fn digest_of<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("serializable").as_bytes())
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

// ---------------------------------------------------------------- prepare

/// Where `prepare` puts (or put) its outputs for this config.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPaths {
    pub dir: PathBuf,
    pub digest: String,
    pub corpus_sha256: String,
}

impl PreparedPaths {
    pub fn train(&self) -> PathBuf {
        self.dir.join("train.jsonl")
    }
    pub fn test(&self) -> PathBuf {
        self.dir.join("test.jsonl")
    }
    pub fn vocab(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }
    pub fn expanded(&self, mode: AuxMode, split: &str) -> PathBuf {
        self.dir.join(format!("expanded/{}.{split}.jsonl", mode.slug()))
    }
}

/// Locates the prepare directory from the corpus bytes and the settings that
/// shape the prepared data (mode is excluded: all four modes are written).
pub fn prepared_paths(config: &PipelineConfig) -> std::result::Result<PreparedPaths, StageError> {
    let bytes = match fs::read(&config.corpus.path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CorpusError::MissingFile(config.corpus.path.clone()).into())
        }
        Err(e) => return Err(io_err(&config.corpus.path, e)),
    };
    let corpus_sha256 = sha256_hex(&bytes);
    let key = json!({
        "corpus_sha256": corpus_sha256,
        "format": config.corpus.format,
        "seed": config.seed,
        "split": config.split,
        "templates": config.templates.resolve()?,
        "tokenizer": config.tokenizer,
    });
    let digest = digest_of(&key);
    Ok(PreparedPaths {
        dir: config.out_dir.join(format!("prepare-{}", &digest[..DIGEST_PREFIX])),
        digest,
        corpus_sha256,
    })
}

#[derive(Debug, Clone)]
pub struct PrepareOutcome {
    pub paths: PreparedPaths,
    pub corpus: corpus::ClassCounts,
    pub train: corpus::ClassCounts,
    pub test: corpus::ClassCounts,
    pub vocab_len: usize,
}

/// Loads and canonicalizes the corpus, splits it, trains the vocabulary on the
/// training split (reviews plus every auxiliary sentence) and writes the
/// expanded pairs of both splits in all four modes.
pub fn cmd_prepare(config: &PipelineConfig) -> Result<PrepareOutcome> {
    const S: Stage = Stage::Prepare;
    config.check(Stage::Config)?;
    let paths = prepared_paths(config).at(S)?;
    let templates = config.templates.resolve().at(S)?;
    let corpus = corpus::load_corpus(&config.corpus.path, config.corpus.format).at(S)?;
    let (train, test) = corpus::stratified_split(&corpus, config.split.test_fraction, config.seed).at(S)?;

    let mut out = ArtifactWriter::create(paths.dir.clone()).at(S)?;
    for (name, c) in [("corpus.jsonl", &corpus), ("train.jsonl", &train), ("test.jsonl", &test)] {
        corpus::write_canonical(c, &out.path(name)).at(S)?;
        out.adopt(name).at(S)?;
    }

    let mut vocab_texts: Vec<String> = train.review_texts().into_iter().map(str::to_string).collect();
    for mode in AuxMode::ALL {
        let tr = auxpair::expand_corpus(&train, mode, &templates).at(S)?;
        let te = auxpair::expand_corpus(&test, mode, &templates).at(S)?;
        vocab_texts.extend(tr.examples.iter().map(|e| e.sentence_b.clone()));
        out.write(&format!("expanded/{}.train.jsonl", mode.slug()), tr.to_jsonl().as_bytes())
            .at(S)?;
        out.write(&format!("expanded/{}.test.jsonl", mode.slug()), te.to_jsonl().as_bytes())
            .at(S)?;
    }
    let vocab = tokenizer::train_vocab(&vocab_texts, config.tokenizer.vocab_size, config.tokenizer.min_frequency)
        .at(S)?;
    out.write("vocab.txt", vocab.to_file_string().as_bytes()).at(S)?;

    let outcome = PrepareOutcome {
        corpus: corpus_stats(&corpus),
        train: corpus_stats(&train),
        test: corpus_stats(&test),
        vocab_len: vocab.len(),
        paths: paths.clone(),
    };
    let stats = json!({
        "corpus": outcome.corpus,
        "train": outcome.train,
        "test": outcome.test,
        "vocab_size": outcome.vocab_len,
    });
    out.write("stats.json", to_json_pretty(&stats).as_bytes()).at(S)?;
    let inputs = vec![FileDigest {
        path: config.corpus.path.display().to_string(),
        sha256: paths.corpus_sha256.clone(),
    }];
    out.finish("prepare", &paths.digest, config, inputs).at(S)?;
    Ok(outcome)
}

// ---------------------------------------------------------------- train

/// Where `train` puts its outputs for this config and mode.
pub fn train_dir(config: &PipelineConfig, prepared: &PreparedPaths) -> PathBuf {
    let key = json!({
        "prepare": prepared.digest,
        "model_name": config.model_name,
        "mode": config.mode,
        "seed": config.seed,
        "encoder": config.encoder,
        "train": config.train,
    });
    let digest = digest_of(&key);
    config
        .out_dir
        .join(format!("train-{}-{}", config.mode.slug(), &digest[..DIGEST_PREFIX]))
}

pub const FINAL_CHECKPOINT: &str = "model.ckpt.json";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch}.ckpt.json")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub history: TrainHistory,
}

fn require(path: PathBuf) -> std::result::Result<PathBuf, StageError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(StageError::MissingArtifact(path))
    }
}

/// Trains the configured mode from random initialization on the prepared
/// training split, checkpointing after every epoch. The prepared test split
/// supplies the per-epoch evaluation accuracy in the history.
pub fn cmd_train(config: &PipelineConfig) -> Result<TrainOutcome> {
    const S: Stage = Stage::Train;
    config.check(Stage::Config)?;
    let prepared = prepared_paths(config).at(S)?;
    let vocab = Vocab::load(&require(prepared.vocab()).at(S)?).at(S)?;
    let train_corpus = corpus::load_corpus(&require(prepared.train()).at(S)?, CorpusFormat::CanonicalJsonl).at(S)?;
    let test_corpus = corpus::load_corpus(&require(prepared.test()).at(S)?, CorpusFormat::CanonicalJsonl).at(S)?;
    let templates = config.templates.resolve().at(S)?;
    let enc_cfg = config.encoder_config(vocab.len()).at(S)?;
    let max_len = config.tokenizer.max_len;
    let mode = config.mode;

    let encode = |c: &Corpus| -> std::result::Result<EncodedDataset, StageError> {
        let pairs = auxpair::expand_corpus(c, mode, &templates)?;
        Ok(EncodedDataset::encode(&pairs, &vocab, max_len)?)
    };
    let train_data = encode(&train_corpus).at(S)?;
    let eval_data = if test_corpus.is_empty() {
        None
    } else {
        Some(encode(&test_corpus).at(S)?)
    };

    let params = init_params(&enc_cfg).at(S)?;
    let meta = CheckpointMeta {
        model_name: config.model_name.clone(),
        mode,
        templates: templates.clone(),
        max_seq_len: max_len,
        vocab: vocab.tokens().to_vec(),
        epoch: 0,
    };
    let mut out = ArtifactWriter::create(train_dir(config, &prepared)).at(S)?;
    let mut failure: Option<StageError> = None;
    let (params, history) = training::train_with_observer(params, &train_data, &config.train, eval_data.as_ref(), |ev| {
        if let TrainEvent::EpochEnd { record, params } = ev {
            let ckpt = Checkpoint {
                params: (*params).clone(),
                meta: CheckpointMeta {
                    epoch: record.epoch,
                    ..meta.clone()
                },
            };
            if let Err(e) = out.write(&epoch_checkpoint_name(record.epoch), ckpt.to_json().as_bytes()) {
                failure = Some(e);
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })
    .at(S)?;
    if let Some(e) = failure {
        return Err(e.at(S));
    }

    let final_ckpt = Checkpoint {
        params,
        meta: CheckpointMeta {
            epoch: history.epochs.len(),
            ..meta
        },
    };
    let checkpoint = out.write(FINAL_CHECKPOINT, final_ckpt.to_json().as_bytes()).at(S)?;
    out.write("history.csv", history.to_csv().as_bytes()).at(S)?;
    let inputs = [prepared.vocab(), prepared.train(), prepared.test()]
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_hex(&read_bytes(p)?),
            })
        })
        .collect::<std::result::Result<Vec<_>, StageError>>()
        .at(S)?;
    let key = digest_of(&json!({ "prepare": prepared.digest, "config": config }));
    let dir = out.finish("train", &key, config, inputs).at(S)?;
    Ok(TrainOutcome { dir, checkpoint, history })
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalSplit {
    Train,
    #[default]
    Test,
}

impl EvalSplit {
    fn name(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub dir: PathBuf,
    pub reports: Vec<EvalReport>,
    pub markdown: String,
    pub csv: String,
}

fn load_existing_checkpoint(path: &Path) -> std::result::Result<Checkpoint, StageError> {
    if !path.is_file() {
        return Err(StageError::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(load_checkpoint(path)?)
}

fn check_mode(ckpt: &Checkpoint, requested: Option<AuxMode>) -> std::result::Result<(), StageError> {
    match requested {
        Some(m) if m != ckpt.meta.mode => Err(StageError::ModeMismatch {
            trained: ckpt.meta.mode,
            requested: m,
        }),
        _ => Ok(()),
    }
}

fn unique_name(taken: &mut Vec<String>, base: &str) -> String {
    let mut name = base.to_string();
    let mut n = 2;
    while taken.contains(&name) {
        name = format!("{base}-{n}");
        n += 1;
    }
    taken.push(name.clone());
    name
}

/// Evaluates each checkpoint on a prepared split and writes one combined
/// report. With no checkpoints given, the final checkpoint of the configured
/// training run is used. `mode`, when set, must match every checkpoint.
pub fn cmd_eval(
    config: &PipelineConfig,
    checkpoints: &[PathBuf],
    split: EvalSplit,
    mode: Option<AuxMode>,
) -> Result<EvalOutcome> {
    const S: Stage = Stage::Eval;
    config.check(Stage::Config)?;
    let prepared = prepared_paths(config).at(S)?;
    let split_path = require(match split {
        EvalSplit::Train => prepared.train(),
        EvalSplit::Test => prepared.test(),
    })
    .at(S)?;
    let corpus = corpus::load_corpus(&split_path, CorpusFormat::CanonicalJsonl).at(S)?;
    let checkpoints: Vec<PathBuf> = if checkpoints.is_empty() {
        vec![train_dir(config, &prepared).join(FINAL_CHECKPOINT)]
    } else {
        checkpoints.to_vec()
    };

    let mut inputs = vec![FileDigest {
        path: split_path.display().to_string(),
        sha256: sha256_hex(&read_bytes(&split_path).at(S)?),
    }];
    let mut loaded = Vec::new();
    for path in &checkpoints {
        let ckpt = load_existing_checkpoint(path).at(S)?;
        check_mode(&ckpt, mode).at(S)?;
        inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&read_bytes(path).at(S)?),
        });
        loaded.push(ckpt);
    }
    let key = json!({
        "split": split.name(),
        "inputs": inputs.iter().map(|f| &f.sha256).collect::<Vec<_>>(),
    });
    let digest = digest_of(&key);
    let mut out = ArtifactWriter::create(config.out_dir.join(format!("eval-{}", &digest[..DIGEST_PREFIX]))).at(S)?;

    let mut reports = Vec::new();
    let mut taken = Vec::new();
    for ckpt in &loaded {
        let m = &ckpt.meta;
        let vocab = Vocab::from_tokens(m.vocab.clone()).at(S)?;
        let (report, preds) = evaluation::evaluate_model(
            &ckpt.params,
            &corpus,
            m.mode,
            &m.templates,
            &vocab,
            m.max_seq_len,
            &m.model_name,
        )
        .at(S)?;

        let name = unique_name(&mut taken, &report.label);
        out.write(&format!("{name}.txt"), report.render_verbose().as_bytes()).at(S)?;
        let mut lines = String::new();
        for (inst, (gold, pred)) in corpus.instances().iter().zip(&preds.pairs) {
            let row = json!({
                "review_id": inst.review_id,
                "aspect": inst.aspect,
                "gold": gold,
                "predicted": pred,
            });
            let _ = writeln!(lines, "{row}");
        }
        out.write(&format!("{name}.predictions.jsonl"), lines.as_bytes()).at(S)?;
        reports.push(report);
    }
    let rows: Vec<_> = reports.iter().map(EvalReport::row).collect();
    let markdown = render_report(&rows, ReportFormat::Markdown).at(S)?;
    let csv = render_report(&rows, ReportFormat::Csv).at(S)?;
    out.write("report.md", markdown.as_bytes()).at(S)?;
    out.write("report.csv", csv.as_bytes()).at(S)?;
    let dir = out.finish("eval", &digest, config, inputs).at(S)?;
    Ok(EvalOutcome {
        dir,
        reports,
        markdown,
        csv,
    })
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub mode: AuxMode,
    /// Class probabilities (M-modes) or yes-probabilities (B-modes), in
    /// canonical polarity order.
    pub scores: [f64; 3],
    pub polarity: Polarity,
}

impl Prediction {
    /// Stable plain-text rendering for standard output.
    pub fn render(&self) -> String {
        let kind = if self.mode.is_binary() { "yes_scores" } else { "scores" };
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.label);
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = write!(s, "{kind}:");
        for (p, v) in Polarity::ALL.iter().zip(self.scores) {
            let _ = write!(s, " {}={v:.6}", p.as_str());
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "polarity: {}", self.polarity.as_str());
        s
    }
}

/// Classifies one (text, aspect) pair with a checkpoint, through the same
/// expansion/encoding/scoring/decoding path that `eval` uses.
pub fn cmd_predict(checkpoint: &Path, text: &str, aspect: &str, mode: Option<AuxMode>) -> Result<Prediction> {
    const S: Stage = Stage::Predict;
    let ckpt = load_existing_checkpoint(checkpoint).at(S)?;
    check_mode(&ckpt, mode).at(S)?;
    predict_one(&ckpt, text, aspect).at(S)
}

fn predict_one(ckpt: &Checkpoint, text: &str, aspect: &str) -> std::result::Result<Prediction, StageError> {
    let m = &ckpt.meta;
    // placeholder gold label; only the input side of the instance is used
    let instance = AspectInstance::new("input", text, aspect, Polarity::Positive);
    let corpus = Corpus::new("input", vec![instance])?;
    let vocab = Vocab::from_tokens(m.vocab.clone())?;
    let probs = evaluation::score_corpus(&ckpt.params, &corpus, m.mode, &m.templates, &vocab, m.max_seq_len)?;
    let scores = if m.mode.is_binary() {
        auxpair::group_yes_scores(&probs)?
    } else {
        [probs[0][0], probs[0][1], probs[0][2]]
    };
    let polarity = auxpair::decode_scores(m.mode, &probs)?[0];
    Ok(Prediction {
        label: format!("{}-{}", m.model_name, m.mode),
        mode: m.mode,
        scores,
        polarity,
    })
}
