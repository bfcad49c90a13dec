//! Stage II: teacher–student self-training.
//!
//! Each outer iteration freezes the teacher, labels the whole training set
//! with it (hard argmax labels, or re-weighted soft labels optionally
//! restricted to high-confidence tokens), trains the student for a fixed
//! number of Adam steps on those labels, then copies the student into the
//! teacher. Pseudo-labels never outlive their iteration.

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelSequence;
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, BatchSampler, LrSchedule, OptimizerState};
use crate::stage1::{gather, DevSet};
use crate::tagger::{argmax, grad_loss, predict_batch, FeatureVector, PredictionBatch, Simplexes, Targets, TokenClassifier};

/// Re-weighted soft targets and the class mass used to build them.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelBatch {
    labels: Simplexes,
    class_mass: Vec<f64>,
}

impl SoftLabelBatch {
    pub fn from_parts(labels: Simplexes, class_mass: Vec<f64>) -> Self {
        SoftLabelBatch { labels, class_mass }
    }

    pub fn labels(&self) -> &Simplexes {
        &self.labels
    }

    /// `p_c`: total predicted probability of each class.
    pub fn class_mass(&self) -> &[f64] {
        &self.class_mass
    }
}

/// Per-token argmax of the teacher, lowest class index on ties. Not
/// BIO-repaired.
pub fn hard_pseudo_labels(preds: &PredictionBatch) -> Vec<LabelSequence> {
    (0..preds.num_sentences())
        .map(|m| LabelSequence(preds.sentence(m).chunks_exact(preds.classes()).map(argmax).collect()))
        .collect()
}

/// Squares every prediction, divides by the class mass `p_c = Σ f_c` over
/// all tokens of `preds`, and renormalises per token. This sharpens each
/// distribution and counteracts frequent classes.
pub fn soft_pseudo_labels(preds: &PredictionBatch) -> Result<SoftLabelBatch> {
    if preds.num_tokens() == 0 {
        return Err(Error::InvalidTarget("soft labels need at least one token".into()));
    }
    let c = preds.classes();
    let mut mass = vec![0.0; c];
    for row in preds.rows() {
        for (p, f) in mass.iter_mut().zip(row) {
            *p += f;
        }
    }
    let mut values = Vec::with_capacity(preds.values().len());
    for (n, row) in preds.rows().enumerate() {
        let start = values.len();
        let mut total = 0.0;
        for (&f, &p) in row.iter().zip(&mass) {
            let w = if p > 0.0 { f * f / p } else { 0.0 };
            total += w;
            values.push(w);
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidTarget(format!("token {n} has no probability mass")));
        }
        values[start..].iter_mut().for_each(|v| *v /= total);
    }
    Ok(SoftLabelBatch {
        labels: preds.with_values(values),
        class_mass: mass,
    })
}

/// Tokens whose sharpest soft-label probability exceeds `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMask {
    pub selected: Vec<Vec<usize>>,
    pub epsilon: f64,
    tokens: usize,
}

impl ConfidenceMask {
    pub fn selected_count(&self) -> usize {
        self.selected.iter().map(Vec::len).sum()
    }

    pub fn fraction(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.selected_count() as f64 / self.tokens as f64
        }
    }

    /// Flattened per-token flags in batch order.
    pub fn token_mask(&self, lens: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.tokens);
        for (sel, len) in self.selected.iter().zip(lens) {
            let start = out.len();
            out.resize(start + len, false);
            for &n in sel {
                out[start + n] = true;
            }
        }
        out
    }
}

pub fn select_high_confidence(soft: &SoftLabelBatch, epsilon: f64) -> Result<ConfidenceMask> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon must be in (0, 1), got {epsilon}")));
    }
    let s = &soft.labels;
    let selected = (0..s.num_sentences())
        .map(|m| {
            s.sentence(m)
                .chunks_exact(s.classes())
                .enumerate()
                .filter(|(_, row)| row.iter().copied().fold(f64::NEG_INFINITY, f64::max) > epsilon)
                .map(|(n, _)| n)
                .collect()
        })
        .collect();
    Ok(ConfidenceMask {
        selected,
        epsilon,
        tokens: s.num_tokens(),
    })
}

/// Teacher, student, the immutable re-initialisation checkpoint and the
/// student's optimizer state.
#[derive(Debug, Clone)]
pub struct TeacherStudent<M> {
    pub teacher: M,
    pub student: M,
    checkpoint: M,
    pub optimizer: OptimizerState,
}

impl<M: TokenClassifier> TeacherStudent<M> {
    /// Teacher and student both start from `start`.
    pub fn new(start: M, checkpoint: M, adam: AdamConfig) -> Result<Self> {
        if start.weights().len() != checkpoint.weights().len()
            || start.num_classes() != checkpoint.num_classes()
        {
            return Err(Error::Shape("checkpoint shape differs from the model".into()));
        }
        let optimizer = OptimizerState::new(adam, start.weights().len());
        Ok(TeacherStudent {
            teacher: start.clone(),
            student: start,
            checkpoint,
            optimizer,
        })
    }

    pub fn checkpoint(&self) -> &M {
        &self.checkpoint
    }

    /// Student back to the checkpoint with fresh optimizer moments; the
    /// teacher is untouched.
    pub fn reinitialize_student(&mut self) {
        self.student = self.checkpoint.clone();
        self.optimizer.reset();
    }

    pub fn promote_student(&mut self) {
        self.teacher = self.student.clone();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Hard,
    Soft,
    SoftHighConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinitMode {
    Off,
    /// Student starts from the checkpoint instead of the Stage I model.
    Once,
    /// Reset the student whenever dev F1 stalls for `stall_patience`
    /// iterations.
    OnStall,
}

/// Where the class mass `p_c` is summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMassScope {
    /// Over the full training set, once per outer iteration.
    Corpus,
    /// Over each minibatch separately.
    Minibatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    /// Outer iterations (T2).
    pub iterations: u64,
    /// Student steps per iteration (T3).
    pub inner_steps: u64,
    /// Optional per-iteration T3 values; the last entry repeats.
    pub inner_steps_schedule: Vec<u64>,
    pub epsilon: f64,
    pub label_mode: LabelMode,
    pub reinit: ReinitMode,
    pub stall_patience: u64,
    pub class_mass_scope: ClassMassScope,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub lr_decay: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            iterations: 3,
            inner_steps: 300,
            inner_steps_schedule: Vec::new(),
            epsilon: 0.9,
            label_mode: LabelMode::SoftHighConfidence,
            reinit: ReinitMode::Off,
            stall_patience: 2,
            class_mass_scope: ClassMassScope::Corpus,
            batch_size: 16,
            seed: 0,
            lr: 0.01,
            lr_decay: 0.0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must be in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.reinit == ReinitMode::OnStall && self.stall_patience == 0 {
            return Err(Error::Config("stall_patience must be >= 1".into()));
        }
        Ok(())
    }

    /// T3 for 1-based iteration `t`.
    pub fn inner_steps_for(&self, t: u64) -> u64 {
        match self.inner_steps_schedule.as_slice() {
            [] => self.inner_steps,
            s => s[((t - 1) as usize).min(s.len() - 1)],
        }
    }

    pub fn total_inner_steps(&self) -> u64 {
        (1..=self.iterations).map(|t| self.inner_steps_for(t)).sum()
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            decay: self.lr_decay,
        }
    }
}

/// Extra student objective added to the pseudo-label loss (e.g. a
/// consistency term). No implementation ships; the loop only calls it.
pub trait AuxiliaryLoss<M> {
    /// Adds this term's gradient into `grad` and returns its loss value.
    fn add_gradient(
        &mut self,
        student: &M,
        teacher: &M,
        batch: &[&[FeatureVector]],
        grad: &mut [f64],
    ) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2LogRow {
    pub iter: u64,
    pub inner_step: u64,
    /// `None` when the step had no selected tokens.
    pub loss: Option<f64>,
    pub selected_token_fraction: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Stage2Output<M> {
    pub student: M,
    pub log: Vec<Stage2LogRow>,
    pub teacher_updates: u64,
    /// Inner-loop steps taken, including skipped ones.
    pub student_steps: u64,
    /// Adam updates actually applied to the student.
    pub student_updates: u64,
    pub reinits: u64,
    pub skipped_iterations: u64,
}

/// Per-iteration training targets, all derived from one frozen teacher.
enum IterationTargets {
    Hard(Vec<usize>),
    Soft {
        values: Vec<f64>,
        mask: Option<Vec<bool>>,
    },
    PerBatch(PredictionBatch),
}

fn token_offsets(features: &[Vec<FeatureVector>]) -> Vec<usize> {
    let mut off = Vec::with_capacity(features.len() + 1);
    off.push(0);
    for f in features {
        off.push(off.last().copied().unwrap_or(0) + f.len());
    }
    off
}

pub fn train_stage2<M: TokenClassifier>(
    features: &[Vec<FeatureVector>],
    stage1_model: M,
    checkpoint: M,
    config: &Stage2Config,
    adam: &AdamConfig,
    dev: Option<DevSet<'_>>,
) -> Result<Stage2Output<M>> {
    train_stage2_with(features, stage1_model, checkpoint, config, adam, dev, None)
}

/// [`train_stage2`] with an optional auxiliary loss on every student step.
pub fn train_stage2_with<M: TokenClassifier>(
    features: &[Vec<FeatureVector>],
    stage1_model: M,
    checkpoint: M,
    config: &Stage2Config,
    adam: &AdamConfig,
    dev: Option<DevSet<'_>>,
    mut aux: Option<&mut dyn AuxiliaryLoss<M>>,
) -> Result<Stage2Output<M>> {
    config.validate()?;
    adam.validate()?;
    let mut ts = TeacherStudent::new(stage1_model, checkpoint, *adam)?;
    let c = ts.student.num_classes();
    let offsets = token_offsets(features);
    let total_tokens = *offsets.last().expect("non-empty offsets");
    if config.total_inner_steps() > 0 && total_tokens == 0 {
        return Err(Error::Config("stage II needs at least one training token".into()));
    }
    let mut sampler = BatchSampler::new(features.len(), config.batch_size, config.seed);
    let schedule = config.schedule();

    let mut out = Stage2Output {
        student: ts.student.clone(),
        log: Vec::new(),
        teacher_updates: 0,
        student_steps: 0,
        student_updates: 0,
        reinits: 0,
        skipped_iterations: 0,
    };
    let mut global_step = 0u64;
    let mut best_dev = f64::NEG_INFINITY;
    let mut stall = 0u64;

    for t in 1..=config.iterations {
        if t == 1 && config.reinit == ReinitMode::Once {
            ts.reinitialize_student();
            out.reinits += 1;
        }
        // Frozen teacher: all targets for this iteration come from here.
        let preds = predict_batch(&ts.teacher, features)?;
        let (targets, fraction) = match (config.label_mode, config.class_mass_scope) {
            (LabelMode::Hard, _) => (
                IterationTargets::Hard(hard_pseudo_labels(&preds).into_iter().flat_map(|l| l.0).collect()),
                1.0,
            ),
            (mode, ClassMassScope::Corpus) => {
                let soft = soft_pseudo_labels(&preds)?;
                if mode == LabelMode::SoftHighConfidence {
                    let mask = select_high_confidence(&soft, config.epsilon)?;
                    let fraction = mask.fraction();
                    let flags = mask.token_mask(features.iter().map(Vec::len));
                    (
                        IterationTargets::Soft {
                            values: soft.labels.values().to_vec(),
                            mask: Some(flags),
                        },
                        fraction,
                    )
                } else {
                    (
                        IterationTargets::Soft {
                            values: soft.labels.values().to_vec(),
                            mask: None,
                        },
                        1.0,
                    )
                }
            }
            (mode, ClassMassScope::Minibatch) => {
                let fraction = if mode == LabelMode::SoftHighConfidence {
                    // Reported against corpus-level mass; batches recompute their own.
                    select_high_confidence(&soft_pseudo_labels(&preds)?, config.epsilon)?.fraction()
                } else {
                    1.0
                };
                (IterationTargets::PerBatch(preds), fraction)
            }
        };

        let inner = config.inner_steps_for(t);
        let skip_iteration = fraction == 0.0 && config.label_mode == LabelMode::SoftHighConfidence;
        if skip_iteration {
            warn!("stage II iteration {t}: no token passed the confidence threshold; skipping");
            out.skipped_iterations += 1;
            out.log.push(Stage2LogRow {
                iter: t,
                inner_step: 0,
                loss: None,
                selected_token_fraction: 0.0,
                dev_f1: None,
            });
        } else {
            for k in 1..=inner {
                let batch = sampler.next_batch();
                let feats = gather(features, &batch);
                let lr = schedule.lr(global_step);
                global_step += 1;

                let mut hard = Vec::new();
                let mut soft_vals = Vec::new();
                let mut mask_vals: Option<Vec<bool>> = None;
                match &targets {
                    IterationTargets::Hard(all) => {
                        for &m in &batch {
                            hard.extend_from_slice(&all[offsets[m]..offsets[m + 1]]);
                        }
                    }
                    IterationTargets::Soft { values, mask } => {
                        for &m in &batch {
                            soft_vals.extend_from_slice(&values[offsets[m] * c..offsets[m + 1] * c]);
                        }
                        if let Some(mask) = mask {
                            let mut mv = Vec::new();
                            for &m in &batch {
                                mv.extend_from_slice(&mask[offsets[m]..offsets[m + 1]]);
                            }
                            mask_vals = Some(mv);
                        }
                    }
                    IterationTargets::PerBatch(preds) => {
                        let soft = soft_pseudo_labels(&preds.select(&batch))?;
                        if config.label_mode == LabelMode::SoftHighConfidence {
                            let mask = select_high_confidence(&soft, config.epsilon)?;
                            mask_vals = Some(mask.token_mask(batch.iter().map(|&m| features[m].len())));
                        }
                        soft_vals = soft.labels.values().to_vec();
                    }
                }
                let tgt = if matches!(targets, IterationTargets::Hard(_)) {
                    Targets::Hard(&hard)
                } else {
                    Targets::Soft(&soft_vals)
                };

                let mut lg = grad_loss(&ts.student, &feats, tgt, mask_vals.as_deref())?;
                if let Some(hook) = aux.as_deref_mut() {
                    lg.loss += hook.add_gradient(&ts.student, &ts.teacher, &feats, &mut lg.grad)?;
                }
                if !lg.loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "stage II iteration {t} step {k}: loss became {}",
                        lg.loss
                    )));
                }
                out.student_steps += 1;
                let loss = if lg.tokens > 0 {
                    adam_step(ts.student.weights_mut(), &lg.grad, &mut ts.optimizer, lr)?;
                    ts.student.bump_version();
                    out.student_updates += 1;
                    Some(lg.loss)
                } else {
                    None
                };
                out.log.push(Stage2LogRow {
                    iter: t,
                    inner_step: k,
                    loss,
                    selected_token_fraction: fraction,
                    dev_f1: None,
                });
            }
        }

        ts.promote_student();
        out.teacher_updates += 1;

        if let Some(d) = dev {
            let f1 = d.evaluate(&ts.student)?.f1;
            if let Some(last) = out.log.last_mut() {
                last.dev_f1 = Some(f1);
            }
            if config.reinit == ReinitMode::OnStall {
                if f1 > best_dev {
                    best_dev = f1;
                    stall = 0;
                } else {
                    stall += 1;
                    if stall >= config.stall_patience && t < config.iterations {
                        ts.reinitialize_student();
                        out.reinits += 1;
                        stall = 0;
                    }
                }
            }
        }
    }

    out.student = if config.iterations == 0 {
        ts.student
    } else {
        ts.teacher
    };
    Ok(out)
}

/// CSV with columns `iter,inner_step,loss,selected_token_fraction,dev_f1`.
pub fn stage2_log_csv(rows: &[Stage2LogRow]) -> String {
    let mut s = String::from("iter,inner_step,loss,selected_token_fraction,dev_f1\n");
    for r in rows {
        let _ = write!(s, "{},{},", r.iter, r.inner_step);
        if let Some(l) = r.loss {
            let _ = write!(s, "{l:.8}");
        }
        let _ = write!(s, ",{:.6},", r.selected_token_fraction);
        if let Some(f) = r.dev_f1 {
            let _ = write!(s, "{f:.6}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[&[f64]]) -> PredictionBatch {
        Simplexes::from_sentences(rows[0].len(), vec![rows.concat()]).unwrap()
    }

    #[test]
    fn argmax_labels_break_ties_low() {
        let p = batch(&[&[0.2, 0.5, 0.3]]);
        assert_eq!(hard_pseudo_labels(&p)[0].0, [1]);
        assert_eq!(hard_pseudo_labels(&batch(&[&[0.5, 0.5]]))[0].0, [0]);
        assert_eq!(hard_pseudo_labels(&batch(&[&[0.25; 4]]))[0].0, [0]);
    }

    #[test]
    fn worked_reweighting_example() {
        let s = soft_pseudo_labels(&batch(&[&[0.9, 0.1], &[0.6, 0.4]])).unwrap();
        assert!((s.class_mass()[0] - 1.5).abs() < 1e-12);
        assert!((s.class_mass()[1] - 0.5).abs() < 1e-12);
        let r = s.labels();
        // 0.54/0.56 = 27/28, 0.24/0.56 = 3/7
        assert!((r.row(0)[0] - 27.0 / 28.0).abs() < 1e-12);
        assert!((r.row(1)[0] - 3.0 / 7.0).abs() < 1e-12);
        assert!((r.row(0)[0] - 0.9643).abs() < 1e-4);
        assert!((r.row(1)[1] - 0.5714).abs() < 1e-4);

        let hi = select_high_confidence(&s, 0.9).unwrap();
        assert_eq!(hi.selected, vec![vec![0]]);
        let lo = select_high_confidence(&s, 0.4).unwrap();
        assert_eq!(lo.selected, vec![vec![0, 1]]);
        assert_eq!(lo.token_mask([2]), [true, true]);
        assert!(select_high_confidence(&s, 1.0).is_err());
    }

    #[test]
    fn single_token_is_a_fixed_point() {
        let f = [0.1, 0.7, 0.2];
        let s = soft_pseudo_labels(&batch(&[&f])).unwrap();
        for (a, b) in s.labels().row(0).iter().zip(f) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn one_hot_balanced_is_a_fixed_point() {
        let s = soft_pseudo_labels(&batch(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(s.labels().values(), [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn unused_class_has_zero_mass() {
        let s = soft_pseudo_labels(&batch(&[&[0.5, 0.5, 0.0]])).unwrap();
        assert_eq!(s.class_mass()[2], 0.0);
        assert_eq!(s.labels().row(0)[2], 0.0);
    }

    #[test]
    fn inner_step_schedule() {
        let cfg = Stage2Config {
            iterations: 4,
            inner_steps: 9,
            inner_steps_schedule: vec![2, 5],
            ..Default::default()
        };
        assert_eq!(
            (1..=4).map(|t| cfg.inner_steps_for(t)).collect::<Vec<_>>(),
            [2, 5, 5, 5]
        );
        assert_eq!(cfg.total_inner_steps(), 17);
        assert!(Stage2Config {
            epsilon: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
