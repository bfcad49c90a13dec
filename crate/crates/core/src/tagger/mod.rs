//! The token classifier: hashed window features feeding a linear softmax.

mod checkpoint;
mod features;
mod grad;
mod model;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader,
    MAGIC,
};
pub use features::{featurize, featurize_corpus, word_shape, FeatureConfig, FeatureVector};
pub use grad::{grad_loss, LossGradient, Targets, PROB_FLOOR};
pub(crate) use grad::check_distribution;
pub use model::{
    forward, init_params, predict_batch, softmax_rows, ModelParams, PredictionBatch, Simplexes,
    TokenClassifier,
};

use crate::corpus::{LabelSchema, LabelSequence};
use crate::eval::repair_bio;
use crate::error::Result;

/// Lowest-index argmax of a probability row.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Argmax labels per sentence, BIO-repaired for span extraction.
pub fn predict_labels<M: TokenClassifier, S: AsRef<[FeatureVector]> + Sync>(
    model: &M,
    sentences: &[S],
    schema: &LabelSchema,
) -> Result<Vec<LabelSequence>> {
    let preds = predict_batch(model, sentences)?;
    Ok((0..preds.num_sentences())
        .map(|m| {
            let raw: Vec<usize> = preds.sentence(m).chunks_exact(preds.classes()).map(argmax).collect();
            repair_bio(&raw, schema)
        })
        .collect())
}
