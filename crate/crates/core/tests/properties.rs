mod common;

use bond::corpus::{repair_bio, spans_from_labels, validate_bio, LabelSchema, Sentence};
use bond::distant::{DistantLabeler, Gazetteer, KnowledgeSource, StampPosition, StampRule};
use bond::stage2::{hard_pseudo_labels, select_high_confidence, soft_pseudo_labels};
use bond::tagger::{decode_checkpoint, encode_checkpoint, featurize, FeatureConfig, ModelParams};
use common::*;
use proptest::prelude::*;

fn schema() -> LabelSchema {
    LabelSchema::new(["PER", "LOC", "ORG"]).unwrap()
}

const WORDS: [&str; 8] = ["alpha", "Beta", "gamma", "Delta", "Corp", "the", "Lake", "x"];

fn sentence_strategy() -> impl Strategy<Value = Vec<&'static str>> {
    proptest::collection::vec(proptest::sample::select(&WORDS[..]), 1..12)
}

proptest! {
    #[test]
    fn repair_always_yields_valid_bio(raw in proptest::collection::vec(0usize..7, 0..30)) {
        let s = schema();
        let fixed = repair_bio(&raw, &s);
        prop_assert!(validate_bio(&fixed, &s).is_valid());
        prop_assert_eq!(fixed.len(), raw.len());
        // Outside tags are never changed.
        for (a, b) in raw.iter().zip(&fixed.0) {
            if *a == 0 {
                prop_assert_eq!(*b, 0);
            }
        }
    }

    #[test]
    fn repair_is_identity_on_valid_sequences(seed in any::<u64>(), len in 0usize..30) {
        let s = schema();
        let labels = random_bio(&mut rng(seed), len, 3);
        prop_assert_eq!(repair_bio(&labels.0, &s), labels);
    }

    #[test]
    fn distant_labels_are_valid_and_cover_known_phrases(words in sentence_strategy()) {
        let s = schema();
        let mut gaz = Gazetteer::new("test");
        gaz.insert("PER", "alpha beta");
        gaz.insert("LOC", "gamma");
        gaz.insert("ORG", "gamma");
        gaz.insert("LOC", "delta");
        let rules = vec![
            StampRule::new("Corp", 2, StampPosition::Tail).unwrap(),
            StampRule::new("Lake", 1, StampPosition::Head).unwrap(),
        ];
        let sources: [&dyn KnowledgeSource; 1] = [&gaz];
        let labeler = DistantLabeler::new(s.clone(), &sources, rules);
        let sentence = Sentence::new("d", words.iter().copied()).unwrap();
        let out = labeler.label_sentence(&sentence);
        prop_assert!(validate_bio(&out.labels, &s).is_valid());
        let spans = spans_from_labels(&out.labels, &s).unwrap();
        // "gamma" is listed under two types, so it is never labelled alone.
        for span in spans {
            let text: Vec<&str> = words[span.start..=span.end].to_vec();
            prop_assert!(text != ["gamma"]);
        }
        // An unambiguous single-token phrase is always found.
        for (i, w) in words.iter().enumerate() {
            if w.eq_ignore_ascii_case("delta")
                && (i == 0 || !words[i - 1].eq_ignore_ascii_case("Lake"))
                && words.get(i + 1).is_none_or(|n| *n != "Corp")
            {
                prop_assert_eq!(out.labels.0[i], s.begin(1));
            }
        }
    }

    #[test]
    fn soft_labels_are_distributions(seed in any::<u64>()) {
        let f = random_predictions(&mut rng(seed), 80, 8);
        let preds = to_simplexes(&f);
        let soft = soft_pseudo_labels(&preds).unwrap();
        let mass: f64 = soft.class_mass().iter().sum();
        prop_assert!((mass - preds.num_tokens() as f64).abs() < 1e-9);
        for (row, orig) in soft.labels().rows().zip(preds.rows()) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert_eq!(row.len(), orig.len());
        }
    }

    #[test]
    fn selection_shrinks_as_epsilon_grows(seed in any::<u64>(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let f = random_predictions(&mut rng(seed), 60, 6);
        let soft = soft_pseudo_labels(&to_simplexes(&f)).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m_lo = select_high_confidence(&soft, lo).unwrap();
        let m_hi = select_high_confidence(&soft, hi).unwrap();
        prop_assert!(m_hi.selected_count() <= m_lo.selected_count());
        prop_assert!(m_hi.fraction() <= 1.0);
    }

    #[test]
    fn hard_labels_follow_the_argmax(seed in any::<u64>()) {
        let f = random_predictions(&mut rng(seed), 60, 6);
        let labels = hard_pseudo_labels(&to_simplexes(&f));
        for (sent, l) in f.iter().zip(&labels) {
            for (row, &y) in sent.iter().zip(&l.0) {
                prop_assert!(row.iter().all(|&v| v <= row[y]));
            }
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), dim in 1usize..40, classes in 1usize..10, digest in any::<u64>()) {
        let model = random_model(&mut rng(seed), dim, classes);
        let (header, back) = decode_checkpoint(&encode_checkpoint(&model, digest)).unwrap();
        prop_assert!(back.same_weights(&model));
        prop_assert_eq!(header.feature_digest, digest);
        prop_assert_eq!((back.dim(), back.classes()), (dim, classes));
    }

    #[test]
    fn truncated_checkpoints_are_rejected(seed in any::<u64>(), cut in 1usize..64) {
        let bytes = encode_checkpoint(&random_model(&mut rng(seed), 3, 2), 0);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_checkpoint(&bytes[..keep]).is_err());
    }

    #[test]
    fn features_are_in_range_and_deterministic(words in sentence_strategy(), bits in 4u32..12) {
        let cfg = FeatureConfig { hash_bits: bits, ..Default::default() };
        let sentence = Sentence::new("d", words.iter().copied()).unwrap();
        let a = featurize(&sentence, &cfg);
        prop_assert_eq!(&a, &featurize(&sentence, &cfg));
        prop_assert_eq!(a.len(), words.len());
        for fv in &a {
            prop_assert!(fv.entries.windows(2).all(|w| w[0].0 < w[1].0));
            prop_assert!(fv.entries.iter().all(|&(j, _)| (j as usize) < cfg.dim()));
        }
    }
}

#[test]
fn zero_weight_model_predicts_uniform_soft_labels() {
    let model = ModelParams::zeros(4, 3).unwrap();
    let preds = bond::tagger::predict_batch(&model, &random_features(&mut rng(1), 3, 4)).unwrap();
    let soft = soft_pseudo_labels(&preds).unwrap();
    for row in soft.labels().rows() {
        for v in row {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }
    // Ties go to the lowest class index.
    assert!(hard_pseudo_labels(&preds).iter().all(|l| l.0.iter().all(|&y| y == 0)));
}
