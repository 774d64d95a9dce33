use absa_pair::encoder::math::{log_sum_exp, Matrix};
use absa_pair::encoder::{gelu, init_params, layer_norm, multi_head_attention, softmax, EncoderConfig};
use absa_pair::training::cross_entropy;
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-60.0f64..60.0, 1..24)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn softmax_ignores_constant_shift(
        logits in prop::collection::vec(-30.0f64..30.0, 1..24),
        shift in -500.0f64..500.0,
    ) {
        let a = softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_logits_cost_ln3(c in -1e3f64..1e3, gold in 0usize..3) {
        let loss = cross_entropy(&[c, c, c], gold).unwrap();
        prop_assert!((loss - 3f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp(logits in prop::collection::vec(-40.0f64..40.0, 2..6), g in 0usize..6) {
        let g = g % logits.len();
        let direct = log_sum_exp(&logits) - logits[g];
        prop_assert!((cross_entropy(&logits, g).unwrap() - direct).abs() <= 1e-12);
    }

    #[test]
    fn layer_norm_standardizes(v in prop::collection::vec(-100.0f64..100.0, 2..64)) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        prop_assume!(v.iter().any(|x| (x - mean).abs() > 1e-3));
        let ones = vec![1.0; v.len()];
        let zeros = vec![0.0; v.len()];
        let y = layer_norm(&v, &ones, &zeros, 1e-12);
        let n = y.len() as f64;
        let m = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        prop_assert!(m.abs() <= 1e-6);
        prop_assert!((var - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..1000, len in 2usize..10, masked in 0usize..8) {
        let cfg = EncoderConfig { vocab_size: 8, max_len: 16, seed, ..EncoderConfig::default() };
        let params = init_params(&cfg).unwrap();
        let hidden = Matrix::from_vec(
            len,
            cfg.hidden_size,
            (0..len * cfg.hidden_size).map(|i| ((i as f64 + seed as f64) * 0.37).sin()).collect(),
        );
        let real = len - masked.min(len - 1);
        let mask: Vec<u8> = (0..len).map(|i| u8::from(i < real)).collect();
        let out = multi_head_attention(&hidden, &mask, &params.layers[0], cfg.num_heads).unwrap();
        prop_assert_eq!(out.probs.len(), cfg.num_heads);
        for head in &out.probs {
            for r in 0..len {
                let row = head.row(r);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(row[real..].iter().all(|&w| w == 0.0));
            }
        }
    }
}

#[test]
fn gelu_reference_points() {
    // erf-based values at high precision
    assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    assert_eq!(gelu(0.0), 0.0);
    assert!((gelu(-1.0) - (-0.158_655_253_931_457_05)).abs() < 1e-15);
}

#[test]
fn softmax_reference_values() {
    let p = softmax(&[1.0, 2.0, 3.0]);
    let want = [0.090_030_573_170_380_46, 0.244_728_471_054_797_65, 0.665_240_955_774_821_9];
    for (a, b) in p.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}
