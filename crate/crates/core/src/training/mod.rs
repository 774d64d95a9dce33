//! Cross-entropy fine-tuning: loss, analytic gradients, Adam, and the epoch
//! loop.

mod adam;
mod backward;

pub use adam::{adam_step, adam_update_slice, clip_grad_norm, scheduled_learning_rate, AdamHyper, OptimizerState};
pub use backward::{backward, logit_gradient};

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auxpair::{self, AuxError, AuxMode, PairDataset};
use crate::corpus::Polarity;
use crate::encoder::math::{log_sum_exp, softmax};
use crate::encoder::{forward, Batch, ForwardMode, ModelError, ModelParams};
use crate::tokenizer::{encode_pair, EncodedSequence, TokenizerError, Vocab};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("{mode} data needs a {expected}-class head, model has {actual}")]
    ClassCountMismatch {
        mode: AuxMode,
        expected: usize,
        actual: usize,
    },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("stale activation cache: {0}")]
    StaleCache(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Decode(#[from] AuxError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// `-log softmax(logits)[gold]`, evaluated in log space.
pub fn cross_entropy(logits: &[f64], gold: usize) -> Result<f64> {
    if gold >= logits.len() {
        return Err(TrainError::LabelOutOfRange {
            label: gold,
            num_classes: logits.len(),
        });
    }
    Ok((log_sum_exp(logits) - logits[gold]).max(0.0))
}

/// Mean cross-entropy over the rows of a logit matrix.
pub fn mean_cross_entropy(logits: &crate::encoder::Matrix, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &gold) in labels.iter().enumerate() {
        total += cross_entropy(logits.row(i), gold)?;
    }
    Ok(total / labels.len() as f64)
}

fn default_batch_size() -> usize {
    16
}
fn default_learning_rate() -> f64 {
    2e-5
}
fn default_epochs() -> usize {
    4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_epsilon")]
    pub adam_epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    /// Linear warmup length in steps; 0 disables warmup.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Decoupled weight decay; 0 disables it.
    #[serde(default)]
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_epsilon: default_epsilon(),
            seed: 0,
            shuffle: true,
            warmup_steps: 0,
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) || self.weight_decay < 0.0 {
            return bad("adam_epsilon must be positive and weight_decay nonnegative");
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0) {
                return bad("max_grad_norm must be positive");
            }
        }
        Ok(())
    }
}

/// Tokenized pair examples with their class targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub mode: AuxMode,
    pub sequences: Vec<EncodedSequence>,
    pub labels: Vec<usize>,
    /// Gold polarity per source instance.
    pub gold: Vec<Polarity>,
}

impl EncodedDataset {
    pub fn encode(pairs: &PairDataset, vocab: &Vocab, max_len: usize) -> Result<Self> {
        let sequences = pairs
            .examples
            .iter()
            .map(|ex| encode_pair(&ex.sentence_a, &ex.sentence_b, vocab, max_len))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(EncodedDataset {
            mode: pairs.mode,
            sequences,
            labels: pairs.examples.iter().map(|e| e.label.class_index()).collect(),
            gold: pairs.gold.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let seqs: Vec<&EncodedSequence> = indices.iter().map(|&i| &self.sequences[i]).collect();
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Batch::from_sequences(&seqs, &labels)?)
    }
}

/// SplitMix64 finalizer over `(seed, domain, counter)`.
pub fn derive_seed(seed: u64, domain: u64, counter: u64) -> u64 {
    let mut z = seed
        .wrapping_add(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(counter.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SHUFFLE_DOMAIN: u64 = 1;
pub const DROPOUT_DOMAIN: u64 = 2;

/// Example order for one epoch. Each epoch draws from its own stream derived
/// from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE_DOMAIN, epoch as u64));
        order.shuffle(&mut rng);
    }
    order
}

/// Class probabilities for every sequence, eval mode.
pub fn score_dataset(params: &ModelParams, data: &EncodedDataset, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk)?;
        let fwd = forward(params, &batch, ForwardMode::Eval)?;
        for i in 0..chunk.len() {
            out.push(softmax(fwd.logits.row(i)));
        }
    }
    Ok(out)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of sequences whose argmax class equals the target.
pub fn sequence_accuracy(probabilities: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = probabilities
        .iter()
        .zip(labels)
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    correct as f64 / labels.len() as f64
}

/// Aspect-level accuracy after decoding (binary modes decode per group).
pub fn decoded_accuracy(data: &EncodedDataset, probabilities: &[Vec<f64>]) -> Result<f64> {
    let predicted = auxpair::decode_scores(data.mode, probabilities)?;
    let correct = predicted.iter().zip(&data.gold).filter(|(p, g)| p == g).count();
    Ok(if data.gold.is_empty() {
        0.0
    } else {
        correct as f64 / data.gold.len() as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-example training loss over the epoch's steps.
    pub mean_loss: f64,
    /// Eval-mode per-sequence accuracy on the training data after the epoch.
    pub train_accuracy: f64,
    /// Decoded aspect-level accuracy on the evaluation data, if supplied.
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "mean_loss", "train_accuracy", "eval_accuracy"])
            .expect("in-memory write");
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.mean_loss.to_string(),
                r.train_accuracy.to_string(),
                r.eval_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Progress notifications from [`train_with_observer`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step {
        epoch: usize,
        step: u64,
        indices: &'a [usize],
        loss: f64,
    },
    EpochEnd {
        record: &'a EpochRecord,
        params: &'a ModelParams,
    },
}

pub fn check_head(params: &ModelParams, mode: AuxMode) -> Result<()> {
    if params.config.num_classes != mode.num_classes() {
        return Err(TrainError::ClassCountMismatch {
            mode,
            expected: mode.num_classes(),
            actual: params.config.num_classes,
        });
    }
    Ok(())
}

/// One forward/backward/update on a batch. Returns the mean batch loss
/// measured before the update.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<f64> {
    let dropout_seed = derive_seed(config.seed, DROPOUT_DOMAIN, state.step);
    let out = forward(params, batch, ForwardMode::Train { dropout_seed })?;
    let loss = mean_cross_entropy(&out.logits, &batch.labels)?;
    let mut grads = backward(params, batch, &out)?;
    if let Some(max) = config.max_grad_norm {
        clip_grad_norm(&mut grads, max);
    }
    adam_step(params, &grads, state, config)?;
    Ok(loss)
}

pub fn train(
    params: ModelParams,
    data: &EncodedDataset,
    config: &TrainConfig,
    eval: Option<&EncodedDataset>,
) -> Result<(ModelParams, TrainHistory)> {
    train_with_observer(params, data, config, eval, |_| ControlFlow::Continue(()))
}

/// Runs `epochs × ⌈N / batch_size⌉` steps (the last batch of an epoch may be
/// short). The observer sees every step and every finished epoch and may stop
/// training early by returning `ControlFlow::Break`.
pub fn train_with_observer<F>(
    mut params: ModelParams,
    data: &EncodedDataset,
    config: &TrainConfig,
    eval: Option<&EncodedDataset>,
    mut observer: F,
) -> Result<(ModelParams, TrainHistory)>
where
    F: FnMut(&TrainEvent<'_>) -> ControlFlow<()>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_head(&params, data.mode)?;
    if let Some(e) = eval {
        check_head(&params, e.mode)?;
    }
    let mut state = OptimizerState::new(&params);
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let order = epoch_order(data.len(), config.seed, epoch, config.shuffle);
        let mut loss_sum = 0.0;
        let mut stop = false;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.batch(chunk)?;
            let loss = train_step(&mut params, &mut state, &batch, config)?;
            loss_sum += loss * chunk.len() as f64;
            let event = TrainEvent::Step {
                epoch: epoch + 1,
                step: state.step,
                indices: chunk,
                loss,
            };
            if observer(&event).is_break() {
                stop = true;
                break;
            }
        }
        if stop {
            break;
        }
        let train_probs = score_dataset(&params, data, config.batch_size)?;
        let eval_accuracy = match eval {
            Some(e) => Some(decoded_accuracy(e, &score_dataset(&params, e, config.batch_size)?)?),
            None => None,
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: sequence_accuracy(&train_probs, &data.labels),
            eval_accuracy,
        };
        let flow = observer(&TrainEvent::EpochEnd {
            record: &record,
            params: &params,
        });
        history.epochs.push(record);
        if flow.is_break() {
            break;
        }
    }
    Ok((params, history))
}
