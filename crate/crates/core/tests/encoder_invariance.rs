mod common;

use absa_pair::encoder::{forward, init_params, Batch, ForwardMode};
use absa_pair::tokenizer::{pack_pair, EncodedSequence, PAD_ID};
use common::tiny_config;
use proptest::prelude::*;

fn cls_logits(params: &absa_pair::ModelParams, seq: &EncodedSequence) -> Vec<f64> {
    let batch = Batch::from_sequences(&[seq], &[0]).unwrap();
    forward(params, &batch, ForwardMode::Eval).unwrap().logits.row(0).to_vec()
}

fn pad_more(seq: &EncodedSequence, extra: usize) -> EncodedSequence {
    let mut s = seq.clone();
    s.token_ids.extend(std::iter::repeat_n(PAD_ID, extra));
    s.segment_ids.extend(std::iter::repeat_n(0, extra));
    s.attention_mask.extend(std::iter::repeat_n(0, extra));
    s
}

#[test]
fn trailing_padding_leaves_logits_unchanged() {
    let mut cfg = tiny_config(30, 3);
    cfg.max_len = 32;
    let params = init_params(&cfg).unwrap();
    let seq = pack_pair(vec![4, 5, 6, 7], vec![8, 9], 12).unwrap();
    let a = cls_logits(&params, &seq);
    let b = cls_logits(&params, &pad_more(&seq, 10));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-6, "{a:?} vs {b:?}");
    }
}

#[test]
fn padding_content_is_ignored() {
    let params = init_params(&tiny_config(30, 2)).unwrap();
    let seq = pack_pair(vec![4, 5], vec![6], 10).unwrap();
    let mut noisy = seq.clone();
    for i in seq.real_len()..noisy.len() {
        noisy.token_ids[i] = 20 + i as u32 % 5;
        noisy.segment_ids[i] = 1;
    }
    assert_eq!(cls_logits(&params, &seq), cls_logits(&params, &noisy));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Without position or segment signal, CLS only sees a bag of tokens.
    #[test]
    fn cls_is_permutation_invariant_without_positions(
        tokens in prop::collection::vec(4u32..30, 2..10),
        seed in 0u64..50,
    ) {
        let mut cfg = tiny_config(30, 3);
        cfg.seed = seed;
        let mut params = init_params(&cfg).unwrap();
        params.position_embeddings.data.iter_mut().for_each(|x| *x = 0.0);
        params.segment_embeddings.data.iter_mut().for_each(|x| *x = 0.0);
        let seq = pack_pair(tokens.clone(), vec![5], 16).unwrap();
        let mut perm = seq.clone();
        let real = seq.real_len();
        perm.token_ids[1..real].reverse();
        perm.segment_ids[1..real].reverse();
        let a = cls_logits(&params, &seq);
        let b = cls_logits(&params, &perm);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn batch_rows_do_not_interact() {
    let params = init_params(&tiny_config(30, 3)).unwrap();
    let s1 = pack_pair(vec![4, 5, 6], vec![7], 12).unwrap();
    let s2 = pack_pair(vec![8], vec![9, 10, 11, 12], 12).unwrap();
    let both = Batch::from_sequences(&[&s1, &s2], &[0, 1]).unwrap();
    let out = forward(&params, &both, ForwardMode::Eval).unwrap();
    assert_eq!(out.logits.row(0), cls_logits(&params, &s1).as_slice());
    assert_eq!(out.logits.row(1), cls_logits(&params, &s2).as_slice());
}

#[test]
fn dropout_masks_depend_only_on_seed_and_row() {
    let params = init_params(&tiny_config(30, 3)).unwrap();
    let s = pack_pair(vec![4, 5, 6], vec![7], 12).unwrap();
    let batch = Batch::from_sequences(&[&s, &s], &[0, 0]).unwrap();
    let a = forward(&params, &batch, ForwardMode::Train { dropout_seed: 5 }).unwrap();
    let b = forward(&params, &batch, ForwardMode::Train { dropout_seed: 5 }).unwrap();
    let c = forward(&params, &batch, ForwardMode::Train { dropout_seed: 6 }).unwrap();
    assert_eq!(a.logits, b.logits);
    assert_ne!(a.logits, c.logits);
    // identical inputs in different rows draw different masks
    assert_ne!(a.logits.row(0), a.logits.row(1));
}
