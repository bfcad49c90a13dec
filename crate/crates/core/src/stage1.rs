//! Stage I: adapt the tagger to the distant labels for a fixed number of
//! Adam steps. The step budget is the early-stopping mechanism; the dev set,
//! when given, is only logged.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSchema, LabelSequence};
use crate::error::{Error, Result};
use crate::eval::{entity_prf, Metrics};
use crate::optim::{train_step, AdamConfig, BatchSampler, LrSchedule, OptimizerState};
use crate::tagger::{predict_labels, FeatureVector, Targets, TokenClassifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    /// Number of Adam updates (T1).
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    /// Subtracted from the learning rate after every step.
    pub lr_decay: f64,
    /// Evaluate the dev set every this many steps (0 = never). The final
    /// step is always evaluated when a dev set is supplied.
    pub eval_every: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            steps: 300,
            batch_size: 16,
            seed: 0,
            lr: 0.01,
            lr_decay: 0.0,
            eval_every: 25,
        }
    }
}

impl Stage1Config {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            decay: self.lr_decay,
        }
    }
}

/// Featurized sentences with the labels to fit.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub features: &'a [Vec<FeatureVector>],
    pub labels: &'a [LabelSequence],
}

impl LabeledSet<'_> {
    pub(crate) fn check(&self) -> Result<()> {
        if self.features.len() != self.labels.len() {
            return Err(Error::Shape(format!(
                "{} featurized sentences vs {} label sequences",
                self.features.len(),
                self.labels.len()
            )));
        }
        for (m, (f, l)) in self.features.iter().zip(self.labels).enumerate() {
            if f.len() != l.len() {
                return Err(Error::Shape(format!(
                    "sentence {m}: {} feature vectors vs {} labels",
                    f.len(),
                    l.len()
                )));
            }
        }
        Ok(())
    }
}

/// Held-out sentences with gold labels for curve logging.
#[derive(Debug, Clone, Copy)]
pub struct DevSet<'a> {
    pub features: &'a [Vec<FeatureVector>],
    pub gold: &'a [LabelSequence],
    pub schema: &'a LabelSchema,
}

impl DevSet<'_> {
    pub fn evaluate<M: TokenClassifier>(&self, model: &M) -> Result<Metrics> {
        let pred = predict_labels(model, self.features, self.schema)?;
        entity_prf(self.gold, &pred, self.schema)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Stage1Output<M> {
    pub model: M,
    pub log: Vec<Stage1LogRow>,
    /// Optimizer updates performed.
    pub steps: u64,
}

pub(crate) fn gather<'a>(
    features: &'a [Vec<FeatureVector>],
    batch: &[usize],
) -> Vec<&'a [FeatureVector]> {
    batch.iter().map(|&m| features[m].as_slice()).collect()
}

/// Runs exactly `config.steps` Adam updates of the cross-entropy against the
/// training labels and returns the parameters after the last one.
pub fn train_stage1<M: TokenClassifier>(
    data: LabeledSet<'_>,
    model: M,
    config: &Stage1Config,
    adam: &AdamConfig,
    dev: Option<DevSet<'_>>,
) -> Result<Stage1Output<M>> {
    data.check()?;
    adam.validate()?;
    if config.steps > 0 && data.features.is_empty() {
        return Err(Error::Config("stage I needs at least one training sentence".into()));
    }
    let mut model = model;
    let mut state = OptimizerState::new(*adam, model.weights().len());
    let mut sampler = BatchSampler::new(data.features.len(), config.batch_size, config.seed);
    let schedule = config.schedule();
    let mut log = Vec::with_capacity(config.steps as usize);

    for step in 1..=config.steps {
        let batch = sampler.next_batch();
        let feats = gather(data.features, &batch);
        let targets: Vec<usize> = batch.iter().flat_map(|&m| data.labels[m].0.iter().copied()).collect();
        let lr = schedule.lr(step - 1);
        let outcome = train_step(&mut model, &mut state, &feats, Targets::Hard(&targets), None, lr)
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("stage I step {step}: {msg}")),
                other => other,
            })?;
        let dev_f1 = match dev {
            Some(d)
                if config.eval_every > 0
                    && (step % config.eval_every == 0 || step == config.steps) =>
            {
                Some(d.evaluate(&model)?.f1)
            }
            _ => None,
        };
        log.push(Stage1LogRow {
            step,
            lr,
            loss: outcome.loss,
            dev_f1,
        });
    }

    Ok(Stage1Output {
        model,
        log,
        steps: state.step(),
    })
}

/// CSV with columns `step,lr,loss,dev_f1`; `dev_f1` is empty on rows that
/// were not evaluated.
pub fn stage1_log_csv(rows: &[Stage1LogRow]) -> String {
    let mut s = String::from("step,lr,loss,dev_f1\n");
    for r in rows {
        let _ = write!(s, "{},{},{:.8}", r.step, r.lr, r.loss);
        match r.dev_f1 {
            Some(f) => {
                let _ = writeln!(s, ",{f:.6}");
            }
            None => s.push_str(",\n"),
        }
    }
    s
}
