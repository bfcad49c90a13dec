//! Losses, the Adam update, the linear learning-rate schedule and the
//! minibatch sampler.

mod losses;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{cross_entropy_loss, kl_soft_loss, LossReport};

use crate::error::{Error, Result};
use crate::tagger::{grad_loss, FeatureVector, Targets, TokenClassifier};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        OptimizerState {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.step = 0;
    }
}

/// One bias-corrected Adam update with optional decoupled weight decay. A
/// non-finite gradient is rejected before anything is modified.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "params {}, grad {}, optimizer state {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    let AdamConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let decay = lr * weight_decay;

    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        if decay > 0.0 {
            *p -= decay * *p;
        }
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub tokens: usize,
    /// False when no token was selected and the parameters were left alone.
    pub updated: bool,
}

/// Loss, gradient and one Adam update on a minibatch. A batch with no
/// selected tokens is skipped without touching the optimizer.
pub fn train_step<M: TokenClassifier>(
    model: &mut M,
    state: &mut OptimizerState,
    batch: &[&[FeatureVector]],
    targets: Targets<'_>,
    mask: Option<&[bool]>,
    lr: f64,
) -> Result<StepOutcome> {
    let lg = grad_loss(model, batch, targets, mask)?;
    if !lg.loss.is_finite() {
        return Err(Error::Numerical(format!("loss became {}", lg.loss)));
    }
    if lg.tokens == 0 {
        return Ok(StepOutcome {
            loss: 0.0,
            tokens: 0,
            updated: false,
        });
    }
    adam_step(model.weights_mut(), &lg.grad, state, lr)?;
    model.bump_version();
    Ok(StepOutcome {
        loss: lg.loss,
        tokens: lg.tokens,
        updated: true,
    })
}

/// `lr(t) = max(0, base − decay·t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule { base, decay: 0.0 }
    }

    pub fn lr(&self, step: u64) -> f64 {
        (self.base - self.decay * step as f64).max(0.0)
    }
}

/// Seeded epoch-wise shuffling over sentence indices.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        BatchSampler {
            batch_size: batch_size.max(1),
            rng,
            order,
            pos: 0,
            epoch: 0,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Next slice of the current permutation; the last batch of an epoch may
    /// be short. Empty only when there are no sentences.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}
