//! Auxiliary-sentence construction: turns each `(review, aspect)` instance into
//! sentence-pair classification examples, and decodes classifier outputs back
//! into aspect polarities.
//!
//! Four modes exist. The multi-class modes (`QA-M`, `NLI-M`) emit one example
//! per instance labeled with its polarity. The binary modes (`QA-B`, `NLI-B`)
//! emit one example per candidate polarity, labeled yes for the gold candidate
//! and no otherwise; decoding picks the candidate with the highest
//! yes-probability.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Polarity};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuxError {
    #[error("mode {0} requires a candidate polarity")]
    MissingCandidate(AuxMode),
    #[error("mode {0} does not take a candidate polarity")]
    UnexpectedCandidate(AuxMode),
    #[error("template `{template}` must contain `{placeholder}` exactly once")]
    Placeholder {
        template: String,
        placeholder: &'static str,
    },
    #[error("unknown template language `{0}`")]
    UnknownLanguage(String),
    #[error("unknown auxiliary mode `{0}`")]
    UnknownMode(String),
    #[error("malformed probability vector: {0}")]
    MalformedProbabilities(String),
}

pub type Result<T> = std::result::Result<T, AuxError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuxMode {
    #[serde(rename = "qa-m")]
    QaM,
    #[serde(rename = "nli-m")]
    NliM,
    #[serde(rename = "qa-b")]
    QaB,
    #[serde(rename = "nli-b")]
    NliB,
}

impl AuxMode {
    pub const ALL: [AuxMode; 4] = [AuxMode::QaM, AuxMode::NliM, AuxMode::QaB, AuxMode::NliB];

    pub fn is_binary(self) -> bool {
        matches!(self, AuxMode::QaB | AuxMode::NliB)
    }

    /// Width of the classifier head this mode trains.
    pub fn num_classes(self) -> usize {
        if self.is_binary() {
            2
        } else {
            3
        }
    }

    /// Examples emitted per aspect instance.
    pub fn fan_out(self) -> usize {
        if self.is_binary() {
            3
        } else {
            1
        }
    }

    /// Lowercase identifier used on the command line and in file names.
    pub fn slug(self) -> &'static str {
        match self {
            AuxMode::QaM => "qa-m",
            AuxMode::NliM => "nli-m",
            AuxMode::QaB => "qa-b",
            AuxMode::NliB => "nli-b",
        }
    }
}

impl fmt::Display for AuxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxMode::QaM => "QA-M",
            AuxMode::NliM => "NLI-M",
            AuxMode::QaB => "QA-B",
            AuxMode::NliB => "NLI-B",
        })
    }
}

impl FromStr for AuxMode {
    type Err = AuxError;

    fn from_str(s: &str) -> Result<Self> {
        AuxMode::ALL
            .into_iter()
            .find(|m| m.slug().eq_ignore_ascii_case(s))
            .ok_or_else(|| AuxError::UnknownMode(s.to_string()))
    }
}

pub const ASPECT_SLOT: &str = "{aspect}";
pub const POLARITY_SLOT: &str = "{polarity}";

/// Wording of the auxiliary sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub language_tag: String,
    pub qa_m_template: String,
    pub qa_b_template: String,
    pub nli_b_separator: String,
    /// Surface words for positive, negative, neutral (canonical order).
    pub polarity_words: [String; 3],
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::english()
    }
}

impl TemplateSet {
    pub fn english() -> Self {
        TemplateSet {
            language_tag: "en".into(),
            qa_m_template: "What do you think of the {aspect}".into(),
            qa_b_template: "The polarity of aspect {aspect} is {polarity}".into(),
            nli_b_separator: "-".into(),
            polarity_words: ["positive".into(), "negative".into(), "neutral".into()],
        }
    }

    /// Persian rendering of the same four forms.
    pub fn persian() -> Self {
        TemplateSet {
            language_tag: "fa".into(),
            qa_m_template: "نظر شما در مورد {aspect} چیست".into(),
            qa_b_template: "قطبیت جنبه {aspect} {polarity} است".into(),
            nli_b_separator: "-".into(),
            polarity_words: ["مثبت".into(), "منفی".into(), "خنثی".into()],
        }
    }

    pub fn for_language(tag: &str) -> Result<Self> {
        match tag {
            "en" => Ok(Self::english()),
            "fa" => Ok(Self::persian()),
            other => Err(AuxError::UnknownLanguage(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        require_once(&self.qa_m_template, ASPECT_SLOT)?;
        require_once(&self.qa_b_template, ASPECT_SLOT)?;
        require_once(&self.qa_b_template, POLARITY_SLOT)?;
        Ok(())
    }

    pub fn polarity_word(&self, polarity: Polarity) -> &str {
        &self.polarity_words[polarity.index()]
    }
}

fn require_once(template: &str, placeholder: &'static str) -> Result<()> {
    if template.matches(placeholder).count() == 1 {
        Ok(())
    } else {
        Err(AuxError::Placeholder {
            template: template.to_string(),
            placeholder,
        })
    }
}

/// Builds the second sentence of the pair for one aspect.
pub fn build_auxiliary(
    aspect: &str,
    mode: AuxMode,
    templates: &TemplateSet,
    candidate: Option<Polarity>,
) -> Result<String> {
    match (mode, candidate) {
        (AuxMode::QaB | AuxMode::NliB, None) => return Err(AuxError::MissingCandidate(mode)),
        (AuxMode::QaM | AuxMode::NliM, Some(_)) => return Err(AuxError::UnexpectedCandidate(mode)),
        _ => {}
    }
    Ok(match mode {
        AuxMode::NliM => aspect.to_string(),
        AuxMode::QaM => {
            require_once(&templates.qa_m_template, ASPECT_SLOT)?;
            templates.qa_m_template.replacen(ASPECT_SLOT, aspect, 1)
        }
        AuxMode::QaB => {
            require_once(&templates.qa_b_template, ASPECT_SLOT)?;
            require_once(&templates.qa_b_template, POLARITY_SLOT)?;
            let word = templates.polarity_word(candidate.expect("checked above"));
            // substitute polarity first so an aspect containing "{polarity}" stays literal
            templates
                .qa_b_template
                .replacen(POLARITY_SLOT, word, 1)
                .replacen(ASPECT_SLOT, aspect, 1)
        }
        AuxMode::NliB => {
            let word = templates.polarity_word(candidate.expect("checked above"));
            format!("{aspect}{}{word}", templates.nli_b_separator)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    No,
    Yes,
}

impl BinaryLabel {
    /// Class index in a two-way head: no = 0, yes = 1.
    pub fn index(self) -> usize {
        match self {
            BinaryLabel::No => 0,
            BinaryLabel::Yes => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairLabel {
    Polarity(Polarity),
    Binary(BinaryLabel),
}

impl PairLabel {
    /// Target class index for the classifier head of the matching mode.
    pub fn class_index(self) -> usize {
        match self {
            PairLabel::Polarity(p) => p.index(),
            PairLabel::Binary(b) => b.index(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    /// Position of the source instance in the expanded corpus.
    pub instance: usize,
    pub review_id: String,
    pub aspect: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub candidate: Option<Polarity>,
    pub sentence_a: String,
    pub sentence_b: String,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairDataset {
    pub mode: AuxMode,
    pub examples: Vec<PairExample>,
    /// Gold polarity per source instance, in corpus order.
    pub gold: Vec<Polarity>,
}

impl PairDataset {
    pub fn num_instances(&self) -> usize {
        self.gold.len()
    }

    /// Example indices belonging to instance `i`. For binary modes the three
    /// entries follow canonical polarity order.
    pub fn group(&self, i: usize) -> std::ops::Range<usize> {
        let k = self.mode.fan_out();
        i * k..(i + 1) * k
    }

    /// Serializes every example as one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("example serializes"));
            out.push('\n');
        }
        out
    }
}

/// Expands a corpus in the given mode, preserving corpus order.
pub fn expand_corpus(corpus: &Corpus, mode: AuxMode, templates: &TemplateSet) -> Result<PairDataset> {
    templates.validate()?;
    let mut examples = Vec::with_capacity(corpus.len() * mode.fan_out());
    for (i, inst) in corpus.instances().iter().enumerate() {
        if mode.is_binary() {
            for candidate in Polarity::ALL {
                let label = if candidate == inst.polarity {
                    BinaryLabel::Yes
                } else {
                    BinaryLabel::No
                };
                examples.push(PairExample {
                    instance: i,
                    review_id: inst.review_id.clone(),
                    aspect: inst.aspect.clone(),
                    candidate: Some(candidate),
                    sentence_a: inst.text.clone(),
                    sentence_b: build_auxiliary(&inst.aspect, mode, templates, Some(candidate))?,
                    label: PairLabel::Binary(label),
                });
            }
        } else {
            examples.push(PairExample {
                instance: i,
                review_id: inst.review_id.clone(),
                aspect: inst.aspect.clone(),
                candidate: None,
                sentence_a: inst.text.clone(),
                sentence_b: build_auxiliary(&inst.aspect, mode, templates, None)?,
                label: PairLabel::Polarity(inst.polarity),
            });
        }
    }
    Ok(PairDataset {
        mode,
        examples,
        gold: corpus.instances().iter().map(|i| i.polarity).collect(),
    })
}

const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Index of the largest value; the earliest index wins ties.
fn argmax_first(values: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Decodes a multi-class probability vector (canonical polarity order).
pub fn decode_m(probabilities: &[f64]) -> Result<Polarity> {
    let probs: [f64; 3] = probabilities
        .try_into()
        .map_err(|_| AuxError::MalformedProbabilities(format!("expected 3 values, got {}", probabilities.len())))?;
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(AuxError::MalformedProbabilities(format!("{probs:?}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(AuxError::MalformedProbabilities(format!("sum is {sum}")));
    }
    Ok(Polarity::ALL[argmax_first(&probs)])
}

/// Decodes three independent yes-probabilities, one per candidate polarity in
/// canonical order.
pub fn decode_b(yes_probabilities: &[f64; 3]) -> Result<Polarity> {
    if yes_probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(AuxError::MalformedProbabilities(format!("{yes_probabilities:?}")));
    }
    Ok(Polarity::ALL[argmax_first(yes_probabilities)])
}

/// Yes-probabilities of one binary group, read from two-way class
/// probabilities (index 1 is yes).
pub fn group_yes_scores(group: &[Vec<f64>]) -> Result<[f64; 3]> {
    if group.len() != 3 || group.iter().any(|p| p.len() != 2) {
        return Err(AuxError::MalformedProbabilities(
            "a binary group needs three two-way probability vectors".into(),
        ));
    }
    Ok([group[0][1], group[1][1], group[2][1]])
}

/// Decodes per-example class probabilities into one polarity per source
/// instance. Binary modes consume three consecutive examples per instance.
pub fn decode_scores(mode: AuxMode, probabilities: &[Vec<f64>]) -> Result<Vec<Polarity>> {
    if mode.is_binary() {
        if !probabilities.len().is_multiple_of(3) {
            return Err(AuxError::MalformedProbabilities(format!(
                "{} binary scores do not form complete groups",
                probabilities.len()
            )));
        }
        probabilities
            .chunks(3)
            .map(|g| decode_b(&group_yes_scores(g)?))
            .collect()
    } else {
        probabilities.iter().map(|p| decode_m(p)).collect()
    }
}
