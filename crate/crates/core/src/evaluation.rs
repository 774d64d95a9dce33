//! Aspect-level metrics (accuracy, per-class and macro F1) and comparison
//! tables in Markdown or CSV.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auxpair::{self, AuxError, AuxMode, TemplateSet};
use crate::corpus::{Corpus, Polarity};
use crate::encoder::ModelParams;
use crate::tokenizer::Vocab;
use crate::training::{check_head, score_dataset, EncodedDataset, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("report needs at least one row")]
    NoRows,
    #[error("malformed percentage `{0}`")]
    BadPercent(String),
    #[error(transparent)]
    Aux(#[from] AuxError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Gold and predicted polarity per evaluated aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_name: String,
    pub mode: AuxMode,
    pub pairs: Vec<(Polarity, Polarity)>,
}

impl PredictionSet {
    pub fn new(model_name: impl Into<String>, mode: AuxMode, pairs: Vec<(Polarity, Polarity)>) -> Self {
        PredictionSet {
            model_name: model_name.into(),
            mode,
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Table label in the `<model>-<MODE>` scheme, e.g. `tiny-bert-NLI-M`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.model_name, self.mode)
    }
}

/// Counts indexed `[gold][predicted]` in canonical polarity order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: &[(Polarity, Polarity)]) -> Self {
        let mut m = ConfusionMatrix::default();
        for &(gold, pred) in pairs {
            m.counts[gold.index()][pred.index()] += 1;
        }
        m
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn gold_count(&self, c: Polarity) -> usize {
        self.counts[c.index()].iter().sum()
    }

    pub fn predicted_count(&self, c: Polarity) -> usize {
        self.counts.iter().map(|row| row[c.index()]).sum()
    }

    pub fn scores(&self, c: Polarity) -> ClassScores {
        let tp = self.counts[c.index()][c.index()] as f64;
        let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
        let precision = ratio(tp, self.predicted_count(c));
        let recall = ratio(tp, self.gold_count(c));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn accuracy(preds: &PredictionSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = preds.pairs.iter().filter(|(g, p)| g == p).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Precision, recall and F1 of one class; any 0/0 ratio is defined as 0.
pub fn class_f1(preds: &PredictionSet, c: Polarity) -> Result<ClassScores> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(ConfusionMatrix::from_pairs(&preds.pairs).scores(c))
}

/// Unweighted mean of the three per-class F1 values.
pub fn macro_f1(preds: &PredictionSet) -> Result<f64> {
    let mut sum = 0.0;
    for c in Polarity::ALL {
        sum += class_f1(preds, c)?.f1;
    }
    Ok(sum / 3.0)
}

/// Per-class F1 weighted by gold support.
pub fn weighted_f1(preds: &PredictionSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let m = ConfusionMatrix::from_pairs(&preds.pairs);
    let total = m.total() as f64;
    Ok(Polarity::ALL
        .iter()
        .map(|&c| m.scores(c).f1 * m.gold_count(c) as f64)
        .sum::<f64>()
        / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub total: usize,
    pub accuracy: f64,
    /// Canonical polarity order.
    pub per_class: [ClassScores; 3],
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_predictions(preds: &PredictionSet) -> Result<Self> {
        if preds.is_empty() {
            return Err(EvalError::Empty);
        }
        let confusion = ConfusionMatrix::from_pairs(&preds.pairs);
        Ok(EvalReport {
            label: preds.label(),
            total: preds.len(),
            accuracy: accuracy(preds)?,
            per_class: Polarity::ALL.map(|c| confusion.scores(c)),
            macro_f1: macro_f1(preds)?,
            weighted_f1: weighted_f1(preds)?,
            confusion,
        })
    }

    pub fn row(&self) -> ReportRow {
        ReportRow {
            model: self.label.clone(),
            accuracy: Percent::from_ratio(self.accuracy),
            f1: Some(Percent::from_ratio(self.macro_f1)),
        }
    }

    /// Multi-line breakdown: per-class scores, both F1 averages and the
    /// confusion matrix.
    pub fn render_verbose(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.label);
        let _ = writeln!(s, "instances: {}", self.total);
        let _ = writeln!(s, "accuracy: {:.4}", self.accuracy);
        let _ = writeln!(s, "macro_f1: {:.4}", self.macro_f1);
        let _ = writeln!(s, "weighted_f1: {:.4}", self.weighted_f1);
        let _ = writeln!(s, "class      precision  recall  f1");
        for (c, sc) in Polarity::ALL.iter().zip(&self.per_class) {
            let _ = writeln!(s, "{:<10} {:>9.4}  {:>6.4}  {:.4}", c.as_str(), sc.precision, sc.recall, sc.f1);
        }
        let _ = writeln!(s, "confusion (rows gold, cols predicted; positive, negative, neutral):");
        for row in &self.confusion.counts {
            let _ = writeln!(s, "  {} {} {}", row[0], row[1], row[2]);
        }
        s
    }
}

/// Class probabilities for every expanded pair of `corpus`, in expansion
/// order (three consecutive rows per instance in the binary modes).
pub fn score_corpus(
    params: &ModelParams,
    corpus: &Corpus,
    mode: AuxMode,
    templates: &TemplateSet,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<Vec<f64>>> {
    check_head(params, mode)?;
    let pairs = auxpair::expand_corpus(corpus, mode, templates)?;
    let data = EncodedDataset::encode(&pairs, vocab, max_len)?;
    Ok(score_dataset(params, &data, 64)?)
}

/// Decoded predictions for every instance of a corpus.
pub fn predict_corpus(
    params: &ModelParams,
    corpus: &Corpus,
    mode: AuxMode,
    templates: &TemplateSet,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<Polarity>> {
    let probs = score_corpus(params, corpus, mode, templates, vocab, max_len)?;
    Ok(auxpair::decode_scores(mode, &probs)?)
}

/// Expands the corpus in `mode`, scores it in eval mode, decodes to one
/// polarity per instance and aggregates the metrics.
pub fn evaluate_model(
    params: &ModelParams,
    corpus: &Corpus,
    mode: AuxMode,
    templates: &TemplateSet,
    vocab: &Vocab,
    max_len: usize,
    model_name: &str,
) -> Result<(EvalReport, PredictionSet)> {
    let predicted = predict_corpus(params, corpus, mode, templates, vocab, max_len)?;
    let pairs = corpus
        .instances()
        .iter()
        .map(|i| i.polarity)
        .zip(predicted)
        .collect();
    let preds = PredictionSet::new(model_name, mode, pairs);
    Ok((EvalReport::from_predictions(&preds)?, preds))
}

/// A percentage with a fixed number of decimals for display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percent {
    pub value: f64,
    pub decimals: usize,
}

impl Percent {
    /// A ratio in `[0, 1]` shown as a percentage with one decimal.
    pub fn from_ratio(ratio: f64) -> Self {
        Percent {
            value: ratio * 100.0,
            decimals: 1,
        }
    }

    /// A published percentage such as `"85.54"` or `"91"`. Given decimals are
    /// kept; at least one decimal is shown.
    pub fn parse_published(text: &str) -> Result<Self> {
        let text = text.trim();
        let value: f64 = text.parse().map_err(|_| EvalError::BadPercent(text.to_string()))?;
        if !value.is_finite() {
            return Err(EvalError::BadPercent(text.to_string()));
        }
        let decimals = text.split_once('.').map_or(0, |(_, frac)| frac.len()).max(1);
        Ok(Percent { value, decimals })
    }

    pub fn render(&self) -> String {
        format!("{:.*}", self.decimals, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub accuracy: Percent,
    pub f1: Option<Percent>,
}

impl ReportRow {
    pub fn published(model: &str, accuracy: &str, f1: Option<&str>) -> Result<Self> {
        Ok(ReportRow {
            model: model.to_string(),
            accuracy: Percent::parse_published(accuracy)?,
            f1: f1.map(Percent::parse_published).transpose()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Renders a Model/Accuracy/F1 table sorted by accuracy, highest first (ties
/// by model name).
pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        b.accuracy
            .value
            .partial_cmp(&a.accuracy.value)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.model.cmp(&b.model))
    });
    Ok(match format {
        ReportFormat::Markdown => {
            let mut s = String::from("| Model | Accuracy | F1 |\n| --- | ---: | ---: |\n");
            for r in sorted {
                let f1 = r.f1.map_or_else(|| "-".to_string(), |p| p.render());
                let _ = writeln!(s, "| {} | {} | {} |", r.model, r.accuracy.render(), f1);
            }
            s
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["model", "accuracy", "f1"]).expect("in-memory write");
            for r in sorted {
                let f1 = r.f1.map(|p| p.render()).unwrap_or_default();
                w.write_record([r.model.as_str(), &r.accuracy.render(), &f1])
                    .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
    })
}
