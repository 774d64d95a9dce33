//! Fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};

use absa_pair::corpus::{AspectInstance, Corpus, Polarity};
use absa_pair::encoder::{forward, Batch, EncoderConfig, ForwardMode, ModelParams};
use absa_pair::tokenizer::pack_pair;
use absa_pair::training::{backward, mean_cross_entropy};

/// Two layers, two heads, hidden width 32.
pub fn tiny_config(vocab_size: usize, num_classes: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        hidden_size: 32,
        feed_forward_size: 128,
        vocab_size,
        max_len: 16,
        num_classes,
        dropout_rate: 0.1,
        layer_norm_eps: 1e-12,
        seed: 11,
    }
}

pub const FIXED_VOCAB: usize = 24;

/// Four packed pairs of different real lengths (all padded to `max_len`).
pub fn fixed_batch(max_len: usize, num_classes: usize) -> Batch {
    let pairs: [(&[u32], &[u32]); 4] = [
        (&[4, 5, 6], &[7, 8]),
        (&[9, 10, 11, 12, 13], &[14]),
        (&[15], &[16, 17, 18, 19]),
        (&[20, 21], &[22, 23, 5]),
    ];
    let seqs: Vec<_> = pairs
        .iter()
        .map(|(a, b)| pack_pair(a.to_vec(), b.to_vec(), max_len).unwrap())
        .collect();
    let refs: Vec<_> = seqs.iter().collect();
    let labels: Vec<usize> = [0, 1, 2, 1].iter().map(|l| l % num_classes).collect();
    Batch::from_sequences(&refs, &labels).unwrap()
}

pub fn batch_loss(params: &ModelParams, batch: &Batch, mode: ForwardMode) -> f64 {
    let out = forward(params, batch, mode).unwrap();
    mean_cross_entropy(&out.logits, &batch.labels).unwrap()
}

pub fn analytic_gradient(params: &ModelParams, batch: &Batch, mode: ForwardMode) -> ModelParams {
    let out = forward(params, batch, mode).unwrap();
    backward(params, batch, &out).unwrap()
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// max over entries of |analytic - numeric| / max(|analytic|, |numeric|, floor)
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Entries where both gradients are below this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Central differences over every entry of every tensor.
pub fn gradient_check(params: &ModelParams, batch: &Batch, mode: ForwardMode, step: f64) -> Vec<TensorCheck> {
    let analytic = analytic_gradient(params, batch, mode);
    let names = params.tensor_names();
    let mut probe = params.clone();
    let mut out = Vec::new();
    for (t, name) in names.into_iter().enumerate() {
        let n = analytic.tensors()[t].data.len();
        let mut check = TensorCheck {
            name,
            checked: n,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for i in 0..n {
            let orig = probe.tensors()[t].data[i];
            probe.tensors_mut()[t].data[i] = orig + step;
            let plus = batch_loss(&probe, batch, mode);
            probe.tensors_mut()[t].data[i] = orig - step;
            let minus = batch_loss(&probe, batch, mode);
            probe.tensors_mut()[t].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.tensors()[t].data[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
        }
        out.push(check);
    }
    out
}

const POSITIVE_CUES: [&str; 4] = ["great", "lovely", "superb", "fine"];
const NEGATIVE_CUES: [&str; 4] = ["awful", "broken", "poor", "bad"];
const NEUTRAL_CUES: [&str; 4] = ["usual", "plain", "ordinary", "average"];
const ASPECTS: [&str; 4] = ["price", "screen", "battery", "camera"];

fn cue(p: Polarity, k: usize) -> &'static str {
    match p {
        Polarity::Positive => POSITIVE_CUES[k % 4],
        Polarity::Negative => NEGATIVE_CUES[k % 4],
        Polarity::Neutral => NEUTRAL_CUES[k % 4],
    }
}

/// `n` single-aspect reviews whose polarity is fixed by a cue word.
pub fn separable_corpus(n: usize) -> Corpus {
    let instances = (0..n)
        .map(|i| {
            let p = Polarity::ALL[i % 3];
            let aspect = ASPECTS[(i / 3) % 4];
            let text = format!("the {aspect} is {}", cue(p, i / 12 + i));
            AspectInstance::new(format!("r{i:03}"), text, aspect, p)
        })
        .collect();
    Corpus::new("separable", instances).unwrap()
}

/// Multi-aspect reviews: each review names two aspects with their own cues.
pub fn review_corpus(reviews: usize) -> Corpus {
    let mut instances = Vec::new();
    for r in 0..reviews {
        let a1 = ASPECTS[r % 4];
        let a2 = ASPECTS[(r + 1 + r / 4) % 4];
        let a2 = if a2 == a1 { ASPECTS[(r + 2) % 4] } else { a2 };
        let p1 = Polarity::ALL[r % 3];
        let p2 = Polarity::ALL[(r / 3 + 1) % 3];
        let text = format!("the {a1} is {} but the {a2} is {}", cue(p1, r), cue(p2, r + 1));
        instances.push(AspectInstance::new(format!("rev{r:03}"), text.clone(), a1, p1));
        instances.push(AspectInstance::new(format!("rev{r:03}"), text, a2, p2));
    }
    Corpus::new("reviews", instances).unwrap()
}

/// Writes a canonical corpus plus a small config next to it; returns the
/// config path.
pub fn write_pipeline_fixture(dir: &Path, corpus: &Corpus, mode: &str, epochs: usize) -> PathBuf {
    let corpus_path = dir.join("corpus.jsonl");
    absa_pair::corpus::write_canonical(corpus, &corpus_path).unwrap();
    let cfg = format!(
        "model_name = \"Tiny-BERT\"\nseed = 17\nmode = \"{mode}\"\nout_dir = \"out\"\n\n\
         [corpus]\npath = \"corpus.jsonl\"\n\n\
         [split]\ntest_fraction = 0.25\n\n\
         [templates]\nlanguage = \"en\"\n\n\
         [tokenizer]\nvocab_size = 300\nmin_frequency = 1\nmax_len = 24\n\n\
         [train]\nepochs = {epochs}\nbatch_size = 8\nlearning_rate = 0.001\n"
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

pub struct OverfitRun {
    pub epochs_run: usize,
    pub train_accuracy: f64,
    /// Decoded aspect-level predictions match every gold label.
    pub decoded_matches_gold: bool,
    pub elapsed: std::time::Duration,
    pub params: ModelParams,
}

/// Trains the tiny model from scratch on `corpus` until every training
/// sequence is classified correctly or `max_epochs` pass.
pub fn overfit(corpus: &Corpus, mode: absa_pair::AuxMode, max_epochs: usize) -> OverfitRun {
    use absa_pair::auxpair::{decode_scores, expand_corpus};
    use absa_pair::encoder::init_params;
    use absa_pair::tokenizer::train_vocab;
    use absa_pair::training::{score_dataset, train_with_observer, EncodedDataset, TrainConfig, TrainEvent};
    use absa_pair::TemplateSet;
    use std::ops::ControlFlow;

    let start = std::time::Instant::now();
    let templates = TemplateSet::english();
    let pairs = expand_corpus(corpus, mode, &templates).unwrap();
    let mut texts: Vec<String> = corpus.review_texts().into_iter().map(String::from).collect();
    texts.extend(pairs.examples.iter().map(|e| e.sentence_b.clone()));
    let vocab = train_vocab(&texts, 500, 1).unwrap();
    let data = EncodedDataset::encode(&pairs, &vocab, 16).unwrap();
    let params = init_params(&tiny_config(vocab.len(), mode.num_classes())).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        learning_rate: 1e-3,
        epochs: max_epochs,
        seed: 3,
        ..TrainConfig::default()
    };
    let (params, history) = train_with_observer(params, &data, &cfg, None, |ev| match ev {
        TrainEvent::EpochEnd { record, .. } if record.train_accuracy == 1.0 => ControlFlow::Break(()),
        _ => ControlFlow::Continue(()),
    })
    .unwrap();
    let probs = score_dataset(&params, &data, 64).unwrap();
    let decoded = decode_scores(mode, &probs).unwrap();
    OverfitRun {
        epochs_run: history.epochs.len(),
        train_accuracy: history.epochs.last().map_or(0.0, |r| r.train_accuracy),
        decoded_matches_gold: decoded == data.gold,
        elapsed: start.elapsed(),
        params,
    }
}

/// Published comparison rows, in source order: (model, accuracy, F1).
pub const BASELINE_ROWS: [(&str, &str, Option<&str>); 6] = [
    ("Cabasc", "68.1", Some("61.9")),
    ("ATAE-LSTM", "73.8", Some("72.25")),
    ("IAN", "76.9", Some("75.09")),
    ("RAM", "77.35", Some("74.96")),
    ("AOA", "79.15", Some("77.13")),
    ("TD-LSTM", "85.54", Some("84.4")),
];

/// Fine-tuned rows; the first has no F1 value.
pub const BERT_ROWS: [(&str, &str, Option<&str>); 8] = [
    ("Pars-BERT-NLI-M", "91", None),
    ("Pars-BERT-QA-M", "90", Some("89")),
    ("Pars-BERT-NLI-B", "89.4", Some("88.2")),
    ("Pars-BERT-QA-B", "90.5", Some("89.5")),
    ("Multilingual-BERT-NLI-M", "87.8", Some("86.5")),
    ("Multilingual-BERT-QA-M", "87.8", Some("86.7")),
    ("Multilingual-BERT-NLI-B", "86.8", Some("85.6")),
    ("Multilingual-BERT-QA-B", "85.5", Some("84.5")),
];

pub fn published_rows(rows: &[(&str, &str, Option<&str>)]) -> Vec<absa_pair::evaluation::ReportRow> {
    rows.iter()
        .map(|(m, a, f)| absa_pair::evaluation::ReportRow::published(m, a, *f).unwrap())
        .collect()
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}
