//! The declarative run configuration (TOML) and its consistency checks.
//!
//! ```toml
//! model_name = "Pars-BERT"
//! seed = 7
//! mode = "nli-m"
//! out_dir = "out"
//!
//! [corpus]
//! path = "data/pars_absa.jsonl"
//! format = "canonical-jsonl"      # or "pars-absa-adapter"
//!
//! [split]
//! test_fraction = 0.2
//!
//! [templates]
//! language = "fa"                 # "fa" or "en"; individual fields may be overridden
//!
//! [tokenizer]
//! vocab_size = 4000
//! min_frequency = 1
//! max_len = 64
//!
//! [encoder]
//! num_layers = 2
//! num_heads = 2
//! hidden_size = 32
//!
//! [train]
//! epochs = 4
//! batch_size = 16
//! learning_rate = 2e-5
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.
//! The top-level `seed` drives the split, the initialization and the training
//! streams; a `seed` key under `[train]` is overwritten by it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::auxpair::{AuxMode, TemplateSet};
use crate::corpus::CorpusFormat;
use crate::encoder::EncoderConfig;
use crate::tokenizer::MIN_MAX_LEN;
use crate::training::{derive_seed, TrainConfig};

use super::{Stage, StageError};

/// Stream domain for parameter initialization seeds.
pub const INIT_DOMAIN: u64 = 3;

fn default_model_name() -> String {
    "Pars-BERT".into()
}
fn default_mode() -> AuxMode {
    AuxMode::NliM
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_model_name")]
    pub model_name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: AuxMode,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub templates: TemplateSection,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::CanonicalJsonl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { test_fraction: 0.2 }
    }
}

/// A base language plus optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSection {
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_m_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_b_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_b_separator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity_words: Option<[String; 3]>,
}

impl Default for TemplateSection {
    fn default() -> Self {
        TemplateSection {
            language: "fa".into(),
            qa_m_template: None,
            qa_b_template: None,
            nli_b_separator: None,
            polarity_words: None,
        }
    }
}

impl TemplateSection {
    pub fn resolve(&self) -> Result<TemplateSet, StageError> {
        let mut t = TemplateSet::for_language(&self.language)?;
        if let Some(v) = &self.qa_m_template {
            t.qa_m_template = v.clone();
        }
        if let Some(v) = &self.qa_b_template {
            t.qa_b_template = v.clone();
        }
        if let Some(v) = &self.nli_b_separator {
            t.nli_b_separator = v.clone();
        }
        if let Some(v) = &self.polarity_words {
            t.polarity_words = v.clone();
        }
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    /// Upper bound on the trained vocabulary, specials included.
    pub vocab_size: usize,
    pub min_frequency: usize,
    /// Packed pair length, CLS/SEP/PAD included.
    pub max_len: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection {
            vocab_size: 4000,
            min_frequency: 1,
            max_len: 64,
        }
    }
}

/// Encoder geometry. `vocab_size` and `num_classes` are derived from the
/// trained vocabulary and the mode; when given they are only cross-checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub feed_forward_size: usize,
    /// Position-table length; defaults to the tokenizer's `max_len`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    pub dropout_rate: f64,
    pub layer_norm_eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        EncoderSection {
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            hidden_size: d.hidden_size,
            feed_forward_size: d.feed_forward_size,
            max_len: None,
            dropout_rate: d.dropout_rate,
            layer_norm_eps: d.layer_norm_eps,
            vocab_size: None,
            num_classes: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<AuxMode>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> StageError {
    StageError::Config(msg.into())
}

impl PipelineConfig {
    /// Parses TOML text; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, StageError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if cfg.corpus.path.is_relative() {
            cfg.corpus.path = base_dir.join(&cfg.corpus.path);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base_dir.join(&cfg.out_dir);
        }
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, StageError> {
        let text = std::fs::read_to_string(path).map_err(|source| StageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parent = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = std::path::absolute(parent).map_err(|source| StageError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, &base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(s) = o.seed {
            self.seed = s;
            self.train.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
    }

    /// TOML snapshot; loading it back yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn encoder_max_len(&self) -> usize {
        self.encoder.max_len.unwrap_or(self.tokenizer.max_len)
    }

    /// Checks everything that can be checked before any data is read.
    pub fn validate(&self) -> Result<(), StageError> {
        if self.model_name.trim().is_empty() {
            return Err(config_err("model_name must be nonempty"));
        }
        let f = self.split.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(config_err(format!("split.test_fraction must lie in (0, 1), got {f}")));
        }
        self.templates.resolve()?;
        if self.tokenizer.max_len < MIN_MAX_LEN {
            return Err(config_err(format!(
                "tokenizer.max_len must be at least {MIN_MAX_LEN}, got {}",
                self.tokenizer.max_len
            )));
        }
        if self.tokenizer.max_len > self.encoder_max_len() {
            return Err(config_err(format!(
                "tokenizer.max_len {} exceeds encoder.max_len {}",
                self.tokenizer.max_len,
                self.encoder_max_len()
            )));
        }
        if let Some(c) = self.encoder.num_classes {
            if c != self.mode.num_classes() {
                return Err(config_err(format!(
                    "encoder.num_classes = {c} does not fit mode {} (needs {})",
                    self.mode,
                    self.mode.num_classes()
                )));
            }
        }
        self.encoder_config(self.encoder.vocab_size.unwrap_or(self.tokenizer.vocab_size))?;
        self.train.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    /// Full encoder geometry for a trained vocabulary of `vocab_len` entries.
    pub fn encoder_config(&self, vocab_len: usize) -> Result<EncoderConfig, StageError> {
        if let Some(v) = self.encoder.vocab_size {
            if v != vocab_len {
                return Err(config_err(format!(
                    "encoder.vocab_size = {v} but the trained vocabulary has {vocab_len} entries"
                )));
            }
        }
        let e = &self.encoder;
        let cfg = EncoderConfig {
            num_layers: e.num_layers,
            num_heads: e.num_heads,
            hidden_size: e.hidden_size,
            feed_forward_size: e.feed_forward_size,
            vocab_size: vocab_len,
            max_len: self.encoder_max_len(),
            num_classes: self.mode.num_classes(),
            dropout_rate: e.dropout_rate,
            layer_norm_eps: e.layer_norm_eps,
            seed: derive_seed(self.seed, INIT_DOMAIN, 0),
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub(crate) fn check(&self, stage: Stage) -> Result<(), super::PipelineError> {
        self.validate().map_err(|e| e.at(stage))
    }
}
