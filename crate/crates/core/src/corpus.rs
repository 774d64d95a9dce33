//! Aspect-level sentiment corpora: model, ingest, validation, splitting and
//! summary statistics.
//!
//! The canonical on-disk form is JSON Lines, one aspect instance per line:
//!
//! ```text
//! {"review_id":"r1","text":"...","aspect":"قیمت","polarity":"negative"}
//! ```
//!
//! A second reader understands the upstream Pars-ABSA release layout (see
//! [`adapt_upstream_record`]).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record, field `{field}`: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        field: String,
        reason: String,
    },
    #[error("{path}:{line}: unknown polarity `{value}`")]
    UnknownPolarity {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("instance {index}: {field} must be nonempty")]
    EmptyField { index: usize, field: &'static str },
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    FractionOutOfRange(f64),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Sentiment polarity of one aspect.
///
/// The ordinal order positive < negative < neutral is fixed and is the tie-break
/// order used by every decoder in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    /// All polarities in canonical order.
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
            Polarity::Neutral => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Polarity> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown polarity `{0}`")]
pub struct ParsePolarityError(pub String);

impl FromStr for Polarity {
    type Err = ParsePolarityError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            other => Err(ParsePolarityError(other.to_string())),
        }
    }
}

/// One review paired with one labeled aspect term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectInstance {
    pub review_id: String,
    pub text: String,
    pub aspect: String,
    pub polarity: Polarity,
    /// How many earlier instances share this `(review_id, aspect)` pair.
    /// Assigned by [`Corpus::new`]; never serialized.
    pub occurrence: usize,
}

impl AspectInstance {
    pub fn new(
        review_id: impl Into<String>,
        text: impl Into<String>,
        aspect: impl Into<String>,
        polarity: Polarity,
    ) -> Self {
        AspectInstance {
            review_id: review_id.into(),
            text: text.into(),
            aspect: aspect.into(),
            polarity,
            occurrence: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CanonicalRecord<'a> {
    review_id: &'a str,
    text: &'a str,
    aspect: &'a str,
    polarity: Polarity,
}

/// An ordered collection of aspect instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub source_name: String,
    instances: Vec<AspectInstance>,
}

impl Corpus {
    /// Validates nonempty text/aspect and assigns occurrence indices.
    pub fn new(source_name: impl Into<String>, mut instances: Vec<AspectInstance>) -> Result<Self> {
        let mut seen: HashMap<(String, String), usize> = HashMap::new();
        for (index, inst) in instances.iter_mut().enumerate() {
            if inst.text.is_empty() {
                return Err(CorpusError::EmptyField { index, field: "text" });
            }
            if inst.aspect.is_empty() {
                return Err(CorpusError::EmptyField { index, field: "aspect" });
            }
            let slot = seen
                .entry((inst.review_id.clone(), inst.aspect.clone()))
                .or_insert(0);
            inst.occurrence = *slot;
            *slot += 1;
        }
        Ok(Corpus {
            source_name: source_name.into(),
            instances,
        })
    }

    pub fn empty(source_name: impl Into<String>) -> Self {
        Corpus {
            source_name: source_name.into(),
            instances: Vec::new(),
        }
    }

    pub fn instances(&self) -> &[AspectInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn distinct_reviews(&self) -> usize {
        let mut ids: Vec<&str> = self.instances.iter().map(|i| i.review_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Review texts in corpus order, each distinct review once.
    pub fn review_texts(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.instances
            .iter()
            .filter(|i| seen.insert(i.review_id.as_str()))
            .map(|i| i.text.as_str())
            .collect()
    }

    fn subset(&self, name: String, indices: &[usize]) -> Corpus {
        let instances = indices.iter().map(|&i| self.instances[i].clone()).collect();
        // occurrence indices are recomputed relative to the subset
        Corpus::new(name, instances).expect("subset of a valid corpus is valid")
    }
}

/// Per-class totals for a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
    pub neutral: usize,
    pub total_instances: usize,
    pub distinct_reviews: usize,
}

impl ClassCounts {
    pub fn get(&self, polarity: Polarity) -> usize {
        match polarity {
            Polarity::Positive => self.positive,
            Polarity::Negative => self.negative,
            Polarity::Neutral => self.neutral,
        }
    }
}

pub fn corpus_stats(corpus: &Corpus) -> ClassCounts {
    let mut counts = ClassCounts {
        distinct_reviews: corpus.distinct_reviews(),
        ..ClassCounts::default()
    };
    for inst in corpus.instances() {
        match inst.polarity {
            Polarity::Positive => counts.positive += 1,
            Polarity::Negative => counts.negative += 1,
            Polarity::Neutral => counts.neutral += 1,
        }
        counts.total_instances += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    CanonicalJsonl,
    ParsAbsaAdapter,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CorpusError::MissingFile(path.to_path_buf()))
        }
        Err(source) => {
            return Err(CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let content = String::from_utf8(bytes).map_err(|e| {
        let line = 1 + e.as_bytes()[..e.utf8_error().valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count();
        malformed(path, line, "<encoding>", "invalid UTF-8")
    })?;
    let source_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let instances = match format {
        CorpusFormat::CanonicalJsonl => parse_canonical(path, &content)?,
        CorpusFormat::ParsAbsaAdapter => parse_upstream(path, &content)?,
    };
    Corpus::new(source_name, instances).map_err(|e| match e {
        CorpusError::EmptyField { index, field } => {
            malformed(path, index + 1, field, "must be nonempty")
        }
        other => other,
    })
}

fn malformed(path: &Path, line: usize, field: &str, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn parse_canonical(path: &Path, content: &str) -> Result<Vec<AspectInstance>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| malformed(path, lineno, "<record>", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed(path, lineno, "<record>", "expected a JSON object"))?;
        let field = |name: &str| -> Result<String> {
            match obj.get(name) {
                Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                Some(Value::String(_)) => Err(malformed(path, lineno, name, "must be nonempty")),
                Some(_) => Err(malformed(path, lineno, name, "expected a string")),
                None => Err(malformed(path, lineno, name, "missing")),
            }
        };
        let review_id = field("review_id")?;
        let text = field("text")?;
        let aspect = field("aspect")?;
        let polarity_raw = field("polarity")?;
        let polarity = polarity_raw
            .parse::<Polarity>()
            .map_err(|_| CorpusError::UnknownPolarity {
                path: path.to_path_buf(),
                line: lineno,
                value: polarity_raw.clone(),
            })?;
        out.push(AspectInstance::new(review_id, text, aspect, polarity));
    }
    Ok(out)
}

/// Marker the upstream release uses for the aspect's position inside the review.
pub const UPSTREAM_TARGET_MARKER: &str = "$T$";

/// Maps one upstream record to `(text, aspect, polarity)`.
///
/// The upstream release stores each aspect as three consecutive lines: the
/// review with the aspect replaced by `$T$`, the aspect term, and a polarity
/// code (`1` positive, `-1` negative, `0` neutral).
pub fn adapt_upstream_record(
    masked_text: &str,
    aspect: &str,
    polarity_code: &str,
) -> std::result::Result<(String, String, Polarity), (&'static str, String)> {
    let aspect = aspect.trim();
    if aspect.is_empty() {
        return Err(("aspect", "must be nonempty".into()));
    }
    let masked_text = masked_text.trim();
    if !masked_text.contains(UPSTREAM_TARGET_MARKER) {
        return Err(("text", format!("missing target marker {UPSTREAM_TARGET_MARKER}")));
    }
    let polarity = match polarity_code.trim() {
        "1" => Polarity::Positive,
        "-1" => Polarity::Negative,
        "0" => Polarity::Neutral,
        other => return Err(("polarity", other.to_string())),
    };
    let text = masked_text.replacen(UPSTREAM_TARGET_MARKER, aspect, 1);
    Ok((text, aspect.to_string(), polarity))
}

fn parse_upstream(path: &Path, content: &str) -> Result<Vec<AspectInstance>> {
    let lines: Vec<(usize, &str)> = content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    if !lines.len().is_multiple_of(3) {
        let (line, _) = lines[lines.len() - lines.len() % 3];
        return Err(malformed(path, line, "<record>", "incomplete three-line record"));
    }
    // Reviews are identified by their restored text, numbered by first appearance.
    let mut review_ids: HashMap<String, String> = HashMap::new();
    let mut out = Vec::with_capacity(lines.len() / 3);
    for chunk in lines.chunks(3) {
        let (line, masked) = chunk[0];
        let (text, aspect, polarity) = adapt_upstream_record(masked, chunk[1].1, chunk[2].1)
            .map_err(|(field, reason)| match field {
                "polarity" => CorpusError::UnknownPolarity {
                    path: path.to_path_buf(),
                    line: chunk[2].0,
                    value: reason,
                },
                "aspect" => malformed(path, chunk[1].0, field, reason),
                _ => malformed(path, line, field, reason),
            })?;
        let next = review_ids.len() + 1;
        let review_id = review_ids
            .entry(text.clone())
            .or_insert_with(|| format!("pa-{next:05}"))
            .clone();
        out.push(AspectInstance::new(review_id, text, aspect, polarity));
    }
    Ok(out)
}

/// Writes the corpus as canonical JSON Lines (UTF-8, LF terminated).
pub fn write_canonical(corpus: &Corpus, path: &Path) -> Result<()> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for inst in corpus.instances() {
        let record = CanonicalRecord {
            review_id: &inst.review_id,
            text: &inst.text,
            aspect: &inst.aspect,
            polarity: inst.polarity,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        w.write_all(line.as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Number of test instances drawn from a class of `count` items.
pub fn stratum_test_size(count: usize, test_fraction: f64) -> usize {
    ((count as f64) * test_fraction).round() as usize
}

/// Per-class random split. Each class contributes `round(count * fraction)`
/// instances to the test side; both sides keep corpus order.
pub fn stratified_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::FractionOutOfRange(test_fraction));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut by_class: BTreeMap<Polarity, Vec<usize>> = BTreeMap::new();
    for (i, inst) in corpus.instances().iter().enumerate() {
        by_class.entry(inst.polarity).or_default().push(i);
    }
    let mut is_test = vec![false; corpus.len()];
    for (polarity, mut members) in by_class {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(polarity.index() as u64);
        members.shuffle(&mut rng);
        let k = stratum_test_size(members.len(), test_fraction);
        for &i in &members[..k] {
            is_test[i] = true;
        }
    }
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..corpus.len()).partition(|&i| is_test[i]);
    Ok((
        corpus.subset(format!("{}#train", corpus.source_name), &train_idx),
        corpus.subset(format!("{}#test", corpus.source_name), &test_idx),
    ))
}
