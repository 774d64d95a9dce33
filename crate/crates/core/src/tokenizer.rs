//! Subword vocabulary training and sentence-pair encoding.
//!
//! Text is NFC-normalized, split on whitespace with punctuation isolated, and
//! each word is segmented by greedy longest-match-first WordPiece using `##`
//! continuation pieces. Pairs are packed as
//! `[CLS] a… [SEP] b… [SEP] [PAD]…`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const SPECIAL_TOKENS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

pub const CONTINUATION_PREFIX: &str = "##";
/// Words longer than this (in chars) map straight to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;
/// Smallest packed length: CLS, one A token, SEP, one B token, SEP.
pub const MIN_MAX_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("target vocabulary size {target} leaves no room: {required} tokens are required for specials and the alphabet")]
    TargetTooSmall { target: usize, required: usize },
    #[error("max_len {0} is below the minimum of {MIN_MAX_LEN}")]
    MaxLenTooSmall(usize),
    #[error("vocab file line {line}: {reason}")]
    BadVocab { line: usize, reason: String },
    #[error("vocab i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TokenizerError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from an ordered token list. The first four entries
    /// must be the special tokens in their reserved order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(TokenizerError::BadVocab {
                    line: i + 1,
                    reason: format!("expected special token {special}"),
                });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.contains(['\n', '\r']) {
                return Err(TokenizerError::BadVocab {
                    line: i + 1,
                    reason: "empty token or embedded line break".into(),
                });
            }
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(TokenizerError::BadVocab {
                    line: i + 1,
                    reason: format!("duplicate token `{tok}`"),
                });
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// One token per line; line number (from 0) is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

fn is_split_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '،' | '؛' | '؟' | '«' | '»' | '…' | '٪')
}

/// NFC-normalizes and splits text into words: whitespace separates words and
/// each punctuation character stands alone.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    let mut words = Vec::new();
    for chunk in normalized.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if is_split_punctuation(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// Frequency-based vocabulary: specials, then every character seen at least
/// `min_frequency` times (as a word-initial and a `##` piece), then the most
/// frequent whole words until `target_size` is reached.
pub fn train_vocab<S: AsRef<str>>(texts: &[S], target_size: usize, min_frequency: usize) -> Result<Vocab> {
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut char_freq: BTreeMap<char, usize> = BTreeMap::new();
    for text in texts {
        for word in pre_tokenize(text.as_ref()) {
            for c in word.chars() {
                *char_freq.entry(c).or_default() += 1;
            }
            *word_freq.entry(word).or_default() += 1;
        }
    }
    let alphabet: Vec<char> = char_freq
        .iter()
        .filter(|(_, &n)| n >= min_frequency)
        .map(|(&c, _)| c)
        .collect();
    let required = SPECIAL_TOKENS.len() + 2 * alphabet.len();
    if target_size <= required {
        return Err(TokenizerError::TargetTooSmall {
            target: target_size,
            required,
        });
    }
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    tokens.extend(alphabet.iter().map(|c| format!("{CONTINUATION_PREFIX}{c}")));

    let mut words: Vec<(&String, usize)> = word_freq
        .iter()
        .filter(|(w, &n)| n >= min_frequency && w.chars().count() > 1)
        .map(|(w, &n)| (w, n))
        .collect();
    // frequency descending, then lexicographic
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let room = target_size - required;
    tokens.extend(words.into_iter().take(room).map(|(w, _)| w.clone()));
    Vocab::from_tokens(tokens)
}

/// Greedy longest-match-first segmentation of a single word.
pub fn wordpiece_tokenize(word: &str, vocab: &Vocab) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() > MAX_WORD_CHARS {
        return vec![UNK_TOKEN.to_string()];
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while start < end {
            let mut piece: String = chars[start..end].iter().collect();
            if start > 0 {
                piece.insert_str(0, CONTINUATION_PREFIX);
            }
            if vocab.contains(&piece) {
                found = Some(piece);
                break;
            }
            end -= 1;
        }
        match found {
            Some(piece) => pieces.push(piece),
            None => return vec![UNK_TOKEN.to_string()],
        }
        start = end;
    }
    pieces
}

/// Token ids for a whole text, without special tokens.
pub fn tokenize_ids(text: &str, vocab: &Vocab) -> Vec<u32> {
    pre_tokenize(text)
        .iter()
        .flat_map(|w| wordpiece_tokenize(w, vocab))
        .map(|piece| vocab.id(&piece).unwrap_or(UNK_ID))
        .collect()
}

/// Rejoins `##` continuations into words.
pub fn detokenize(ids: &[u32], vocab: &Vocab) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for &id in ids {
        let tok = vocab.token(id).unwrap_or(UNK_TOKEN);
        match (tok.strip_prefix(CONTINUATION_PREFIX), words.last_mut()) {
            (Some(rest), Some(last)) => last.push_str(rest),
            _ => words.push(tok.to_string()),
        }
    }
    words
}

/// One packed sentence pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Drops the final token of the currently longer side until both fit; the
/// second sentence loses the token on ties.
pub fn truncate_longest_first(a: &mut Vec<u32>, b: &mut Vec<u32>, budget: usize) {
    while a.len() + b.len() > budget {
        if a.len() > b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
}

/// Packs already-tokenized sides into a fixed-length sequence.
pub fn pack_pair(mut a: Vec<u32>, mut b: Vec<u32>, max_len: usize) -> Result<EncodedSequence> {
    if max_len < MIN_MAX_LEN {
        return Err(TokenizerError::MaxLenTooSmall(max_len));
    }
    truncate_longest_first(&mut a, &mut b, max_len - 3);
    let mut token_ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(&a);
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 0);
    token_ids.extend_from_slice(&b);
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 1);
    let real = token_ids.len();
    let mut attention_mask = vec![1u8; real];
    token_ids.resize(max_len, PAD_ID);
    segment_ids.resize(max_len, 0);
    attention_mask.resize(max_len, 0);
    Ok(EncodedSequence {
        token_ids,
        segment_ids,
        attention_mask,
    })
}

pub fn encode_pair(sentence_a: &str, sentence_b: &str, vocab: &Vocab, max_len: usize) -> Result<EncodedSequence> {
    if max_len < MIN_MAX_LEN {
        return Err(TokenizerError::MaxLenTooSmall(max_len));
    }
    pack_pair(tokenize_ids(sentence_a, vocab), tokenize_ids(sentence_b, vocab), max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> Vocab {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|s| s.to_string()));
        Vocab::from_tokens(tokens).unwrap()
    }

    #[test]
    fn toy_corpus_keeps_frequent_word() {
        let v = train_vocab(&["aa aa ab"], 100, 1).unwrap();
        assert!(v.contains("aa"));
        assert!(v.contains("ab"));
        assert!(v.contains("a") && v.contains("##b"));
        assert_eq!(v.id("aa"), Some(8));
    }

    #[test]
    fn empty_corpus_gives_specials_only() {
        let v = train_vocab::<&str>(&[], 10, 1).unwrap();
        assert_eq!(v.tokens(), &SPECIAL_TOKENS.map(String::from)[..]);
    }

    #[test]
    fn target_too_small_is_rejected() {
        assert!(matches!(
            train_vocab(&["ab"], 8, 1),
            Err(TokenizerError::TargetTooSmall { required: 8, .. })
        ));
    }

    #[test]
    fn min_frequency_drops_rare_chars() {
        let v = train_vocab(&["ab ab c"], 50, 2).unwrap();
        assert!(v.contains("a") && !v.contains("c"));
        assert_eq!(wordpiece_tokenize("c", &v), vec![UNK_TOKEN]);
    }

    #[test]
    fn training_is_deterministic() {
        let texts = ["the food was great", "the service was slow", "great food"];
        let a = train_vocab(&texts, 60, 1).unwrap();
        let b = train_vocab(&texts, 60, 1).unwrap();
        assert_eq!(a.to_file_string(), b.to_file_string());
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab(&["play", "##ing", "p", "##l", "##a", "##y", "##i", "##n", "##g"]);
        assert_eq!(wordpiece_tokenize("playing", &v), vec!["play", "##ing"]);
        assert_eq!(wordpiece_tokenize("play", &v), vec!["play"]);
        assert_eq!(wordpiece_tokenize("plax", &v), vec![UNK_TOKEN]);
    }

    #[test]
    fn pre_tokenize_isolates_punctuation() {
        assert_eq!(pre_tokenize("food-positive"), vec!["food", "-", "positive"]);
        assert_eq!(pre_tokenize("  خوبه، ولی  "), vec!["خوبه", "،", "ولی"]);
    }

    #[test]
    fn pack_single_tokens() {
        let e = pack_pair(vec![10], vec![11], 8).unwrap();
        assert_eq!(e.token_ids, vec![CLS_ID, 10, SEP_ID, 11, SEP_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert_eq!(e.segment_ids, vec![0, 0, 0, 1, 1, 0, 0, 0]);
        assert_eq!(e.attention_mask, vec![1, 1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn longest_first_truncation() {
        // 10 + 2 tokens into max_len 10 leaves 7 slots: drop from A until 5 + 2.
        let a: Vec<u32> = (10..20).collect();
        let e = pack_pair(a, vec![30, 31], 10).unwrap();
        assert_eq!(e.token_ids, vec![CLS_ID, 10, 11, 12, 13, 14, SEP_ID, 30, 31, SEP_ID]);
    }

    #[test]
    fn tie_truncates_second_sentence() {
        let mut a = vec![1, 2, 3];
        let mut b = vec![4, 5, 6];
        truncate_longest_first(&mut a, &mut b, 5);
        assert_eq!((a.len(), b.len()), (3, 2));
    }

    #[test]
    fn max_len_too_small() {
        assert!(matches!(pack_pair(vec![1], vec![2], 4), Err(TokenizerError::MaxLenTooSmall(4))));
    }

    #[test]
    fn vocab_file_round_trip_and_validation() {
        let v = train_vocab(&["کیفیت خوبه کیفیت"], 40, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as u32));
        }
        assert!(Vocab::from_tokens(vec!["[UNK]".into()]).is_err());
        let mut dup: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        dup.push("x".into());
        dup.push("x".into());
        assert!(Vocab::from_tokens(dup).is_err());
    }

    #[test]
    fn encode_is_deterministic() {
        let v = train_vocab(&["the food was great"], 60, 1).unwrap();
        let a = encode_pair("the food was great", "food", &v, 16).unwrap();
        let b = encode_pair("the food was great", "food", &v, 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(detokenize(&a.token_ids[1..5], &v), vec!["the", "food", "was", "great"]);
    }
}
