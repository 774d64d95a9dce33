//! Independent reference computations: plain scans and counts written without
//! reuse of the library's own helpers.

use absa_pair::corpus::{AspectInstance, Corpus, Polarity};
use proptest::prelude::*;

const CANONICAL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

/// Maximum first, then the earliest index in canonical order holding it.
pub fn max_scan(values: &[f64; 3]) -> Polarity {
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v > max {
            max = v;
        }
    }
    let mut i = 0;
    while values[i] != max {
        i += 1;
    }
    CANONICAL[i]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn brute_accuracy(pairs: &[(Polarity, Polarity)]) -> f64 {
    let mut hits = 0.0;
    for (g, p) in pairs {
        if g == p {
            hits += 1.0;
        }
    }
    hits / pairs.len() as f64
}

pub fn brute_class(pairs: &[(Polarity, Polarity)], c: Polarity) -> BruteScores {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for &(g, p) in pairs {
        match (g == c, p == c) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    // harmonic mean from raw counts: 2tp / (2tp + fp + fn)
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64 };
    BruteScores { precision, recall, f1 }
}

pub fn polarity() -> impl Strategy<Value = Polarity> {
    prop_oneof![Just(Polarity::Positive), Just(Polarity::Negative), Just(Polarity::Neutral)]
}

pub fn prediction_pairs(max: usize) -> impl Strategy<Value = Vec<(Polarity, Polarity)>> {
    prop::collection::vec((polarity(), polarity()), 1..max)
}

/// Probability triples on a coarse grid (frequent ties) or continuous.
pub fn distribution() -> impl Strategy<Value = [f64; 3]> {
    prop_oneof![
        (0u32..=8, 0u32..=8).prop_filter("sum <= 8", |(a, b)| a + b <= 8).prop_map(|(a, b)| {
            let c = 8 - a - b;
            [f64::from(a) / 8.0, f64::from(b) / 8.0, f64::from(c) / 8.0]
        }),
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)
            .prop_filter("nonzero", |(a, b, c)| a + b + c > 1e-9)
            .prop_map(|(a, b, c)| {
                let s = a + b + c;
                [a / s, b / s, c / s]
            }),
    ]
}

/// Three independent yes-probabilities, grid or continuous.
pub fn yes_scores() -> impl Strategy<Value = [f64; 3]> {
    prop_oneof![
        [0u32..=4, 0u32..=4, 0u32..=4].prop_map(|v| v.map(|x| f64::from(x) / 4.0)),
        [0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0],
    ]
}

const ASPECT_POOL: [&str; 6] = ["price", "screen", "قیمت", "کیفیت", "battery life", "aspect"];

/// Random corpora of 1..40 instances over a handful of reviews, including
/// repeated (review, aspect) pairs.
pub fn corpus() -> impl Strategy<Value = Corpus> {
    prop::collection::vec((0usize..8, 0usize..ASPECT_POOL.len(), polarity()), 1..40).prop_map(|rows| {
        let instances = rows
            .into_iter()
            .map(|(r, a, p)| {
                AspectInstance::new(format!("r{r}"), format!("review {r} text، with «punct»"), ASPECT_POOL[a], p)
            })
            .collect();
        Corpus::new("random", instances).unwrap()
    })
}
