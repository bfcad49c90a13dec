//! Shared fixtures and brute-force reference implementations for the
//! integration tests. The references are written independently of the
//! library code they check.

#![allow(dead_code)]

use std::collections::BTreeSet;

use bond::corpus::{EntitySpan, LabelSchema, LabelSequence};
use bond::tagger::{FeatureVector, ModelParams, Simplexes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random distribution over `c` classes. Raising uniforms to a random power
/// mixes flat rows with very peaked ones.
pub fn random_row(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let power = rng.gen_range(1.0..6.0);
    let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(1e-3f64..1.0).powf(power)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Nested `sentence → token → class` predictions with at most `max_tokens`
/// tokens in total and `2..=max_classes` classes.
pub fn random_predictions(rng: &mut ChaCha8Rng, max_tokens: usize, max_classes: usize) -> Vec<Vec<Vec<f64>>> {
    let c = rng.gen_range(2..=max_classes);
    let mut budget = rng.gen_range(1..=max_tokens);
    let mut out = Vec::new();
    while budget > 0 {
        let n = rng.gen_range(1..=budget.min(30));
        budget -= n;
        out.push((0..n).map(|_| random_row(rng, c)).collect());
    }
    out
}

pub fn to_simplexes(preds: &[Vec<Vec<f64>>]) -> Simplexes {
    let c = preds[0][0].len();
    Simplexes::from_sentences(c, preds.iter().map(|s| s.concat()).collect()).unwrap()
}

pub fn from_simplexes(s: &Simplexes) -> Vec<Vec<Vec<f64>>> {
    (0..s.num_sentences())
        .map(|m| s.sentence(m).chunks(s.classes()).map(<[f64]>::to_vec).collect())
        .collect()
}

/// Literal re-weighting: square each probability, divide by the class total
/// over every token, then normalise each token.
pub fn soft_labels_oracle(f: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let c = f[0][0].len();
    let mut p = vec![0.0; c];
    for sentence in f {
        for token in sentence {
            for k in 0..c {
                p[k] += token[k];
            }
        }
    }
    let mut out = Vec::new();
    for sentence in f {
        let mut rows = Vec::new();
        for token in sentence {
            let mut num = vec![0.0; c];
            let mut z = 0.0;
            for k in 0..c {
                num[k] = token[k] * token[k] / p[k];
                z += num[k];
            }
            for v in num.iter_mut() {
                *v /= z;
            }
            rows.push(num);
        }
        out.push(rows);
    }
    out
}

/// Random strictly valid BIO sequence of length `len` over `types` types.
pub fn random_bio(rng: &mut ChaCha8Rng, len: usize, types: usize) -> LabelSequence {
    let mut labels = Vec::with_capacity(len);
    while labels.len() < len {
        if rng.gen_bool(0.6) {
            labels.push(0);
            continue;
        }
        let t = rng.gen_range(0..types);
        let n = rng.gen_range(1..=3).min(len - labels.len());
        labels.push(1 + 2 * t);
        labels.extend(std::iter::repeat_n(2 + 2 * t, n - 1));
    }
    LabelSequence(labels)
}

/// Spans decoded from the label names alone: `B-X` opens, `I-X` extends.
pub fn spans_oracle(labels: &LabelSequence, schema: &LabelSchema) -> Vec<(usize, usize, String)> {
    let names: Vec<String> = labels.0.iter().map(|&l| schema.label_name(l)).collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < names.len() {
        if let Some(t) = names[i].strip_prefix("B-") {
            let mut j = i;
            while j + 1 < names.len() && names[j + 1] == format!("I-{t}") {
                j += 1;
            }
            spans.push((i, j, t.to_string()));
            i = j + 1;
        } else {
            i += 1;
        }
    }
    spans
}

pub fn spans_named(spans: &[EntitySpan], schema: &LabelSchema) -> Vec<(usize, usize, String)> {
    spans
        .iter()
        .map(|s| (s.start, s.end, schema.entity_types()[s.etype].clone()))
        .collect()
}

/// `(tp, predicted, gold)` over exact `(sentence, start, end, type)` matches.
pub fn prf_counts_oracle(
    gold: &[LabelSequence],
    pred: &[LabelSequence],
    schema: &LabelSchema,
) -> (usize, usize, usize) {
    let collect = |layer: &[LabelSequence]| -> BTreeSet<(usize, usize, usize, String)> {
        layer
            .iter()
            .enumerate()
            .flat_map(|(m, l)| spans_oracle(l, schema).into_iter().map(move |(a, b, t)| (m, a, b, t)))
            .collect()
    };
    let g = collect(gold);
    let p = collect(pred);
    (g.intersection(&p).count(), p.len(), g.len())
}

pub fn f1_from_counts(tp: usize, pred: usize, gold: usize) -> (f64, f64, f64) {
    let p = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
    let r = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Small random sparse inputs for a `dim`-feature model.
pub fn random_features(rng: &mut ChaCha8Rng, sentences: usize, dim: usize) -> Vec<Vec<FeatureVector>> {
    (0..sentences)
        .map(|_| {
            let n = rng.gen_range(1..=5);
            (0..n)
                .map(|_| {
                    let mut idx: Vec<u32> = (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0..dim as u32)).collect();
                    idx.sort_unstable();
                    idx.dedup();
                    FeatureVector {
                        entries: idx.into_iter().map(|j| (j, rng.gen_range(-2.0..2.0))).collect(),
                    }
                })
                .collect()
        })
        .collect()
}

pub fn random_model(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> ModelParams {
    let w = (0..dim * classes).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ModelParams::from_weights(dim, classes, 0, w).unwrap()
}

/// Linearly separable toy task: token label = class of its single feature.
pub fn separable_task(classes: usize, sentences: usize, seed: u64) -> (Vec<Vec<FeatureVector>>, Vec<LabelSequence>) {
    let mut r = rng(seed);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..sentences {
        let n = r.gen_range(1..=6);
        let ys: Vec<usize> = (0..n).map(|_| r.gen_range(0..classes)).collect();
        feats.push(
            ys.iter()
                .map(|&y| FeatureVector {
                    entries: vec![(y as u32, 1.0)],
                })
                .collect(),
        );
        labels.push(LabelSequence(ys));
    }
    (feats, labels)
}
