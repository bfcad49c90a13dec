use super::features::FeatureVector;
use super::model::{softmax_rows, TokenClassifier};
use crate::error::{Error, Result};

/// Smallest probability allowed inside a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Training targets for a batch, flattened over its tokens in order.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// One class index per token.
    Hard(&'a [usize]),
    /// One distribution (`classes` values) per token.
    Soft(&'a [f64]),
}

impl Targets<'_> {
    fn check(&self, tokens: usize, classes: usize) -> Result<()> {
        match *self {
            Targets::Hard(labels) => {
                if labels.len() != tokens {
                    return Err(Error::Shape(format!(
                        "{} hard targets for {tokens} tokens",
                        labels.len()
                    )));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                    return Err(Error::InvalidTarget(format!(
                        "class {bad} out of range for {classes} classes"
                    )));
                }
            }
            Targets::Soft(dist) => {
                if dist.len() != tokens * classes {
                    return Err(Error::Shape(format!(
                        "{} soft target values for {tokens} tokens x {classes} classes",
                        dist.len()
                    )));
                }
                for (n, row) in dist.chunks_exact(classes).enumerate() {
                    check_distribution(row)
                        .map_err(|msg| Error::InvalidTarget(format!("token {n}: {msg}")))?;
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err("negative or non-finite probability".into());
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LossGradient {
    pub grad: Vec<f64>,
    /// Mean loss over unmasked tokens.
    pub loss: f64,
    /// Unmasked token count.
    pub tokens: usize,
    /// Tokens whose log term hit [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Mean cross-entropy `Σ_c −s_c log f_c` over the unmasked tokens of a batch
/// and its exact gradient. Through the softmax the logit gradient of a token
/// is `(f − s) / K` with `K` the unmasked count; masked tokens contribute
/// nothing, and an all-masked batch has zero loss and gradient.
pub fn grad_loss<M: TokenClassifier>(
    model: &M,
    batch: &[&[FeatureVector]],
    targets: Targets<'_>,
    mask: Option<&[bool]>,
) -> Result<LossGradient> {
    let c = model.num_classes();
    let tokens: usize = batch.iter().map(|s| s.len()).sum();
    targets.check(tokens, c)?;
    if let Some(mask) = mask {
        if mask.len() != tokens {
            return Err(Error::Shape(format!(
                "mask has {} entries for {tokens} tokens",
                mask.len()
            )));
        }
    }
    let active = |i: usize| mask.is_none_or(|m| m[i]);
    let counted = (0..tokens).filter(|&i| active(i)).count();

    let mut grad = vec![0.0; model.weights().len()];
    if counted == 0 {
        return Ok(LossGradient {
            grad,
            loss: 0.0,
            tokens: 0,
            clamped: 0,
        });
    }
    let scale = 1.0 / counted as f64;

    let mut loss = 0.0;
    let mut clamped = 0;
    let mut offset = 0;
    for sentence in batch {
        let mut probs = model.logits(sentence)?;
        softmax_rows(&mut probs, c);
        let mut dz = vec![0.0; probs.len()];
        for (n, (p, d)) in probs.chunks_exact(c).zip(dz.chunks_exact_mut(c)).enumerate() {
            let i = offset + n;
            if !active(i) {
                continue;
            }
            let mut hit_floor = false;
            match targets {
                Targets::Hard(labels) => {
                    let y = labels[i];
                    let pf = p[y].max(PROB_FLOOR);
                    hit_floor |= p[y] < PROB_FLOOR;
                    loss -= pf.ln();
                    for (k, (dk, &pk)) in d.iter_mut().zip(p).enumerate() {
                        *dk = scale * (pk - if k == y { 1.0 } else { 0.0 });
                    }
                }
                Targets::Soft(dist) => {
                    let s = &dist[i * c..(i + 1) * c];
                    for (k, (dk, (&pk, &sk))) in d.iter_mut().zip(p.iter().zip(s)).enumerate() {
                        if sk > 0.0 {
                            hit_floor |= p[k] < PROB_FLOOR;
                            loss -= sk * pk.max(PROB_FLOOR).ln();
                        }
                        *dk = scale * (pk - sk);
                    }
                }
            }
            clamped += usize::from(hit_floor);
        }
        model.backward(sentence, &dz, &mut grad);
        offset += sentence.len();
    }
    if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient entry {bad}")));
    }
    Ok(LossGradient {
        grad,
        loss: loss * scale,
        tokens: counted,
        clamped,
    })
}
