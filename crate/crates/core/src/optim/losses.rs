use log::warn;

use crate::corpus::LabelSequence;
use crate::error::{Error, Result};
use crate::stage2::SoftLabelBatch;
use crate::tagger::{check_distribution, PredictionBatch, PROB_FLOOR};

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Mean over the counted tokens; 0 when nothing was counted.
    pub loss: f64,
    /// Contribution of every token (0 for masked tokens).
    pub per_token: Vec<f64>,
    pub counted: usize,
    /// Tokens whose log term was floored at [`PROB_FLOOR`].
    pub clamped: usize,
    /// Nothing was selected; the caller should not take an optimizer step.
    pub skip: bool,
}

fn check_mask(mask: Option<&[bool]>, tokens: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != tokens => Err(Error::Shape(format!(
            "mask has {} entries for {tokens} tokens",
            m.len()
        ))),
        _ => Ok(()),
    }
}

fn finish(per_token: Vec<f64>, counted: usize, clamped: usize) -> LossReport {
    if clamped > 0 {
        warn!("{clamped} token(s) had target probability below {PROB_FLOOR:e}; log clamped");
    }
    let total: f64 = per_token.iter().sum();
    LossReport {
        loss: if counted == 0 { 0.0 } else { total / counted as f64 },
        per_token,
        counted,
        clamped,
        skip: counted == 0,
    }
}

/// Mean `−log f_y` over unmasked tokens.
pub fn cross_entropy_loss(
    preds: &PredictionBatch,
    labels: &[LabelSequence],
    mask: Option<&[bool]>,
) -> Result<LossReport> {
    let tokens = preds.num_tokens();
    check_mask(mask, tokens)?;
    if labels.len() != preds.num_sentences()
        || labels.iter().enumerate().any(|(m, l)| l.len() != preds.sentence_len(m))
    {
        return Err(Error::Shape("labels do not align with predictions".into()));
    }
    let c = preds.classes();
    let mut per_token = vec![0.0; tokens];
    let (mut counted, mut clamped) = (0, 0);
    for (i, (row, &y)) in preds.rows().zip(labels.iter().flat_map(|l| &l.0)).enumerate() {
        if y >= c {
            return Err(Error::InvalidTarget(format!("class {y} out of range")));
        }
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        counted += 1;
        clamped += usize::from(row[y] < PROB_FLOOR);
        per_token[i] = -row[y].max(PROB_FLOOR).ln();
    }
    Ok(finish(per_token, counted, clamped))
}

/// Mean `Σ_c −s_c log f_c` over selected tokens. An empty selection yields
/// loss 0 with `skip` set.
pub fn kl_soft_loss(
    preds: &PredictionBatch,
    soft: &SoftLabelBatch,
    mask: Option<&[bool]>,
) -> Result<LossReport> {
    let tokens = preds.num_tokens();
    check_mask(mask, tokens)?;
    let targets = soft.labels();
    if targets.num_tokens() != tokens || targets.classes() != preds.classes() {
        return Err(Error::Shape("soft labels do not align with predictions".into()));
    }
    let mut per_token = vec![0.0; tokens];
    let (mut counted, mut clamped) = (0, 0);
    for (i, (f, s)) in preds.rows().zip(targets.rows()).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        check_distribution(s).map_err(|msg| Error::InvalidTarget(format!("token {i}: {msg}")))?;
        counted += 1;
        let mut hit = false;
        let mut l = 0.0;
        for (&fc, &sc) in f.iter().zip(s) {
            if sc > 0.0 {
                hit |= fc < PROB_FLOOR;
                l -= sc * fc.max(PROB_FLOOR).ln();
            }
        }
        clamped += usize::from(hit);
        per_token[i] = l;
    }
    Ok(finish(per_token, counted, clamped))
}
