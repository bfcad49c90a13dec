use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::features::FeatureVector;
use crate::error::{Error, Result};

/// Per-token probability rows, flattened sentence by sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplexes {
    classes: usize,
    values: Vec<f64>,
    /// Token offsets; sentence `m` covers tokens `offsets[m]..offsets[m+1]`.
    offsets: Vec<usize>,
}

/// Model output: one simplex over the classes for every token.
pub type PredictionBatch = Simplexes;

impl Simplexes {
    pub fn from_sentences(classes: usize, sentences: Vec<Vec<f64>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(sentences.len() + 1);
        offsets.push(0);
        let mut values = Vec::new();
        for s in sentences {
            if classes == 0 || s.len() % classes != 0 {
                return Err(Error::Shape(format!(
                    "row block of {} values is not a multiple of {classes} classes",
                    s.len()
                )));
            }
            values.extend_from_slice(&s);
            offsets.push(values.len() / classes);
        }
        Ok(Simplexes {
            classes,
            values,
            offsets,
        })
    }

    /// Same sentence layout as `self`, new values.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Simplexes {
            classes: self.classes,
            values,
            offsets: self.offsets.clone(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn num_sentences(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_tokens(&self) -> usize {
        *self.offsets.last().expect("offsets start with 0")
    }

    pub fn sentence_len(&self, m: usize) -> usize {
        self.offsets[m + 1] - self.offsets[m]
    }

    /// First global token index of sentence `m`.
    pub fn sentence_offset(&self, m: usize) -> usize {
        self.offsets[m]
    }

    pub fn sentence(&self, m: usize) -> &[f64] {
        &self.values[self.offsets[m] * self.classes..self.offsets[m + 1] * self.classes]
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.values[token * self.classes..(token + 1) * self.classes]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.classes)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Keeps only the listed sentences, in the given order.
    pub fn select(&self, sentences: &[usize]) -> Self {
        let mut values = Vec::new();
        let mut offsets = vec![0];
        for &m in sentences {
            values.extend_from_slice(self.sentence(m));
            offsets.push(values.len() / self.classes);
        }
        Simplexes {
            classes: self.classes,
            values,
            offsets,
        }
    }
}

/// A token classifier with softmax outputs over flat parameters. Training
/// code only relies on this trait, so another architecture can replace the
/// built-in linear model.
pub trait TokenClassifier: Clone + Send + Sync {
    fn num_classes(&self) -> usize;

    fn weights(&self) -> &[f64];

    fn weights_mut(&mut self) -> &mut [f64];

    /// Logits for each token, flattened `tokens × classes`.
    fn logits(&self, features: &[FeatureVector]) -> Result<Vec<f64>>;

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂logits` for each token.
    fn backward(&self, features: &[FeatureVector], logit_grad: &[f64], grad: &mut [f64]);

    /// Called after every in-place parameter update.
    fn bump_version(&mut self) {}
}

/// Linear softmax weights, `dim × classes`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dim: usize,
    classes: usize,
    weights: Vec<f64>,
    seed: u64,
    version: u64,
}

impl ModelParams {
    pub fn from_weights(dim: usize, classes: usize, seed: u64, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::Shape("dimension and class count must be >= 1".into()));
        }
        if weights.len() != dim * classes {
            return Err(Error::Shape(format!(
                "{} weights for a {dim}x{classes} model",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("non-finite weight".into()));
        }
        Ok(ModelParams {
            dim,
            classes,
            weights,
            seed,
            version: 0,
        })
    }

    pub fn zeros(dim: usize, classes: usize) -> Result<Self> {
        Self::from_weights(dim, classes, 0, vec![0.0; dim * classes])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of in-place updates since construction.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, feature: usize, class: usize) -> f64 {
        self.weights[feature * self.classes + class]
    }

    /// Same weights; ignores the version counter.
    pub fn same_weights(&self, other: &ModelParams) -> bool {
        self.dim == other.dim
            && self.classes == other.classes
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Weights i.i.d. uniform in `[-0.01, 0.01]` from a ChaCha stream seeded by
/// `seed`.
pub fn init_params(dim: usize, classes: usize, seed: u64) -> Result<ModelParams> {
    if dim == 0 || classes == 0 {
        return Err(Error::Shape("dimension and class count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-0.01, 0.01);
    let weights = (0..dim * classes).map(|_| dist.sample(&mut rng)).collect();
    ModelParams::from_weights(dim, classes, seed, weights)
}

impl TokenClassifier for ModelParams {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn logits(&self, features: &[FeatureVector]) -> Result<Vec<f64>> {
        let c = self.classes;
        let mut out = vec![0.0; features.len() * c];
        for (fv, z) in features.iter().zip(out.chunks_exact_mut(c)) {
            for &(j, x) in &fv.entries {
                let j = j as usize;
                if j >= self.dim {
                    return Err(Error::Shape(format!(
                        "feature index {j} out of range for dimension {}",
                        self.dim
                    )));
                }
                for (zc, w) in z.iter_mut().zip(&self.weights[j * c..(j + 1) * c]) {
                    *zc += x * w;
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite parameter reached a logit".into()));
            }
        }
        Ok(out)
    }

    fn backward(&self, features: &[FeatureVector], logit_grad: &[f64], grad: &mut [f64]) {
        let c = self.classes;
        for (fv, dz) in features.iter().zip(logit_grad.chunks_exact(c)) {
            for &(j, x) in &fv.entries {
                let j = j as usize;
                for (g, d) in grad[j * c..(j + 1) * c].iter_mut().zip(dz) {
                    *g += x * d;
                }
            }
        }
    }

    fn bump_version(&mut self) {
        self.version += 1;
    }
}

/// Numerically stable softmax of each `classes`-sized row, in place.
pub fn softmax_rows(values: &mut [f64], classes: usize) {
    for row in values.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Per-token simplexes for one sentence, flattened.
pub fn forward<M: TokenClassifier>(model: &M, features: &[FeatureVector]) -> Result<Vec<f64>> {
    let mut z = model.logits(features)?;
    softmax_rows(&mut z, model.num_classes());
    Ok(z)
}

/// Predictions for many sentences. Sentences are scored in parallel and
/// stitched back in input order.
pub fn predict_batch<M: TokenClassifier, S: AsRef<[FeatureVector]> + Sync>(
    model: &M,
    sentences: &[S],
) -> Result<PredictionBatch> {
    let rows: Vec<Vec<f64>> = sentences
        .par_iter()
        .map(|s| forward(model, s.as_ref()))
        .collect::<Result<_>>()?;
    Simplexes::from_sentences(model.num_classes(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(idx: &[u32]) -> FeatureVector {
        FeatureVector {
            entries: idx.iter().map(|&i| (i, 1.0)).collect(),
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let m = ModelParams::zeros(8, 4).unwrap();
        let p = forward(&m, &[fv(&[1, 3])]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn large_margin_saturates() {
        let mut w = vec![0.0; 2 * 3];
        w[0] = 20.0; // feature 0, class 0
        let m = ModelParams::from_weights(2, 3, 0, w).unwrap();
        let p = forward(&m, &[fv(&[0])]).unwrap();
        // 1 / (1 + 2 e^-20)
        assert!((p[0] - 1.0).abs() < 1e-6);
        assert!((p[0] - 1.0 / (1.0 + 2.0 * (-20.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let base = init_params(4, 3, 1).unwrap();
        let mut shifted = base.clone();
        // feature 2 is active on the token; adding 5 to its row shifts every logit by 5
        for c in 0..3 {
            shifted.weights_mut()[2 * 3 + c] += 5.0;
        }
        let a = forward(&base, &[fv(&[0, 2])]).unwrap();
        let b = forward(&shifted, &[fv(&[0, 2])]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_params(16, 3, 7).unwrap();
        assert!(a.same_weights(&init_params(16, 3, 7).unwrap()));
        assert!(!a.same_weights(&init_params(16, 3, 8).unwrap()));
        assert!(a.weights().iter().all(|w| w.abs() <= 0.01));
        assert!(init_params(0, 3, 1).is_err());
    }

    #[test]
    fn single_class_is_degenerate() {
        let m = init_params(8, 1, 3).unwrap();
        assert_eq!(forward(&m, &[fv(&[1]), fv(&[2, 5])]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let m = ModelParams::zeros(4, 2).unwrap();
        assert!(matches!(forward(&m, &[fv(&[9])]), Err(Error::Shape(_))));
        let mut bad = m.clone();
        bad.weights_mut()[0] = f64::NAN;
        assert!(matches!(forward(&bad, &[fv(&[0])]), Err(Error::Numerical(_))));
        assert!(ModelParams::from_weights(1, 1, 0, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn batch_layout() {
        let m = init_params(8, 2, 0).unwrap();
        let sents = vec![vec![fv(&[1])], vec![fv(&[2]), fv(&[3])]];
        let b = predict_batch(&m, &sents).unwrap();
        assert_eq!(b.num_sentences(), 2);
        assert_eq!(b.num_tokens(), 3);
        assert_eq!(b.sentence(1).len(), 4);
        assert_eq!(b.row(1), &b.sentence(1)[..2]);
        let sel = b.select(&[1]);
        assert_eq!(sel.values(), b.sentence(1));
        for r in b.rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
