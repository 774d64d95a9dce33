mod common;

use absa_pair::auxpair::{decode_b, decode_m, decode_scores, expand_corpus, PairLabel};
use absa_pair::corpus::{corpus_stats, load_corpus, stratified_split, write_canonical, CorpusFormat, Polarity};
use absa_pair::evaluation::{accuracy, class_f1, macro_f1, ConfusionMatrix, EvalReport, PredictionSet};
use absa_pair::tokenizer::{encode_pair, train_vocab, Vocab};
use absa_pair::{AuxMode, TemplateSet};
use common::oracles::*;
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = AuxMode> {
    prop::sample::select(AuxMode::ALL.to_vec())
}

proptest! {
    #[test]
    fn expansion_size_and_group_coverage(c in corpus(), m in mode(), fa in any::<bool>()) {
        let t = if fa { TemplateSet::persian() } else { TemplateSet::english() };
        let d = expand_corpus(&c, m, &t).unwrap();
        prop_assert_eq!(d.examples.len(), c.len() * m.fan_out());
        prop_assert_eq!(d.gold.len(), c.len());
        for (i, inst) in c.instances().iter().enumerate() {
            let group = &d.examples[d.group(i)];
            prop_assert!(group.iter().all(|e| e.instance == i && e.sentence_a == inst.text && e.aspect == inst.aspect));
            if m.is_binary() {
                let cands: Vec<_> = group.iter().map(|e| e.candidate.unwrap()).collect();
                prop_assert_eq!(cands, Polarity::ALL.to_vec());
                let yes = group.iter().filter(|e| e.label.class_index() == 1).count();
                prop_assert_eq!(yes, 1);
                prop_assert_eq!(group[inst.polarity.index()].label.class_index(), 1);
            } else {
                prop_assert_eq!(group[0].label, PairLabel::Polarity(inst.polarity));
            }
        }
    }

    #[test]
    fn gold_labels_survive_expand_then_decode(c in corpus(), m in mode()) {
        let d = expand_corpus(&c, m, &TemplateSet::english()).unwrap();
        let one_hot: Vec<Vec<f64>> = d
            .examples
            .iter()
            .map(|e| {
                let mut v = vec![0.0; m.num_classes()];
                v[e.label.class_index()] = 1.0;
                v
            })
            .collect();
        prop_assert_eq!(decode_scores(m, &one_hot).unwrap(), d.gold);
    }

    #[test]
    fn canonical_jsonl_round_trips(c in corpus()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_canonical(&c, &path).unwrap();
        let back = load_corpus(&path, CorpusFormat::CanonicalJsonl).unwrap();
        prop_assert_eq!(back.instances(), c.instances());
    }

    #[test]
    fn split_is_a_stratified_partition(c in corpus(), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let (train, test) = stratified_split(&c, frac, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), c.len());
        let all = corpus_stats(&c);
        let (a, b) = (corpus_stats(&train), corpus_stats(&test));
        for p in Polarity::ALL {
            prop_assert_eq!(a.get(p) + b.get(p), all.get(p));
            prop_assert_eq!(b.get(p), (all.get(p) as f64 * frac).round() as usize);
        }
        let (train2, test2) = stratified_split(&c, frac, seed).unwrap();
        prop_assert_eq!(train2.instances(), train.instances());
        prop_assert_eq!(test2.instances(), test.instances());
    }

    #[test]
    fn vocab_file_round_trips_and_encodings_are_stable(c in corpus(), size in 40usize..200) {
        let texts: Vec<&str> = c.review_texts();
        let Ok(v) = train_vocab(&texts, size, 1) else { return Ok(()) };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        prop_assert_eq!(&back, &v);
        let inst = &c.instances()[0];
        prop_assert_eq!(
            encode_pair(&inst.text, &inst.aspect, &v, 20).unwrap(),
            encode_pair(&inst.text, &inst.aspect, &back, 20).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decode_m_agrees_with_max_scan(p in distribution()) {
        prop_assert_eq!(decode_m(&p).unwrap(), max_scan(&p));
    }

    #[test]
    fn decode_b_agrees_with_max_scan(p in yes_scores()) {
        prop_assert_eq!(decode_b(&p).unwrap(), max_scan(&p));
    }

    #[test]
    fn metrics_agree_with_brute_force_counts(pairs in prediction_pairs(200)) {
        let set = PredictionSet::new("m", AuxMode::QaM, pairs.clone());
        prop_assert_eq!(accuracy(&set).unwrap(), brute_accuracy(&pairs));
        let mut f1s = [0.0; 3];
        for c in Polarity::ALL {
            let got = class_f1(&set, c).unwrap();
            let want = brute_class(&pairs, c);
            prop_assert_eq!(got.precision, want.precision);
            prop_assert_eq!(got.recall, want.recall);
            prop_assert!((got.f1 - want.f1).abs() <= 1e-12);
            f1s[c.index()] = got.f1;
        }
        prop_assert_eq!(macro_f1(&set).unwrap(), (f1s[0] + f1s[1] + f1s[2]) / 3.0);
    }

    #[test]
    fn metrics_ignore_prediction_order(pairs in prediction_pairs(60), rot in 0usize..60) {
        let mut shuffled = pairs.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = EvalReport::from_predictions(&PredictionSet::new("m", AuxMode::QaM, pairs)).unwrap();
        let b = EvalReport::from_predictions(&PredictionSet::new("m", AuxMode::QaM, shuffled)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn confusion_matrix_conserves_counts(pairs in prediction_pairs(100)) {
        let m = ConfusionMatrix::from_pairs(&pairs);
        prop_assert_eq!(m.total(), pairs.len());
        for c in Polarity::ALL {
            prop_assert_eq!(m.gold_count(c), pairs.iter().filter(|(g, _)| *g == c).count());
        }
        let set = PredictionSet::new("m", AuxMode::QaM, pairs);
        prop_assert_eq!(accuracy(&set).unwrap(), m.trace() as f64 / m.total() as f64);
    }
}
