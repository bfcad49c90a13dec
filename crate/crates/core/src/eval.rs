//! Entity-level scoring with exact `(start, end, type)` span matching, and a
//! token-level confusion table.

use std::collections::HashSet;
use std::fmt::Write as _;

pub use crate::corpus::repair_bio;
use crate::corpus::{spans_from_labels, LabelSchema, LabelSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpanCounts {
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.pred)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.gold)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub(crate) fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeMetrics {
    pub etype: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: SpanCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub pred_count: usize,
    pub gold_count: usize,
    /// One entry per schema type, in schema order.
    pub per_type: Vec<TypeMetrics>,
}

impl Metrics {
    fn from_counts(total: SpanCounts, per_type: Vec<(String, SpanCounts)>) -> Self {
        Metrics {
            precision: total.precision(),
            recall: total.recall(),
            f1: total.f1(),
            tp: total.tp,
            pred_count: total.pred,
            gold_count: total.gold,
            per_type: per_type
                .into_iter()
                .map(|(etype, c)| TypeMetrics {
                    etype,
                    precision: c.precision(),
                    recall: c.recall(),
                    f1: c.f1(),
                    counts: c,
                })
                .collect(),
        }
    }

    /// `F1 (P/R)` in percent with two decimals.
    pub fn summary_line(&self) -> String {
        format!(
            "{:.2} ({:.2}/{:.2})",
            100.0 * self.f1,
            100.0 * self.precision,
            100.0 * self.recall
        )
    }

    /// JSON with every fraction printed to six decimals so that files diff
    /// cleanly across runs.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"precision\": {:.6},", self.precision);
        let _ = writeln!(s, "  \"recall\": {:.6},", self.recall);
        let _ = writeln!(s, "  \"f1\": {:.6},", self.f1);
        let _ = writeln!(s, "  \"tp\": {},", self.tp);
        let _ = writeln!(s, "  \"pred_count\": {},", self.pred_count);
        let _ = writeln!(s, "  \"gold_count\": {},", self.gold_count);
        s.push_str("  \"per_type\": {");
        for (i, t) in self.per_type.iter().enumerate() {
            s.push_str(if i == 0 { "\n" } else { ",\n" });
            let _ = write!(
                s,
                "    {}: {{\"precision\": {:.6}, \"recall\": {:.6}, \"f1\": {:.6}, \"tp\": {}, \"pred_count\": {}, \"gold_count\": {}}}",
                serde_json::to_string(&t.etype).expect("string"),
                t.precision,
                t.recall,
                t.f1,
                t.counts.tp,
                t.counts.pred,
                t.counts.gold
            );
        }
        if !self.per_type.is_empty() {
            s.push_str("\n  ");
        }
        s.push_str("}\n}\n");
        s
    }
}

fn check_aligned(gold: &[LabelSequence], pred: &[LabelSequence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold sequences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (m, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Shape(format!(
                "sentence {m}: {} gold labels vs {} predicted",
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Exact-match entity precision/recall/F1. Both layers must be strict BIO;
/// pass raw model output through [`repair_bio`] first.
pub fn entity_prf(
    gold: &[LabelSequence],
    pred: &[LabelSequence],
    schema: &LabelSchema,
) -> Result<Metrics> {
    check_aligned(gold, pred)?;
    let types = schema.entity_types().len();
    let mut per = vec![SpanCounts::default(); types];
    for (g, p) in gold.iter().zip(pred) {
        let gs = spans_from_labels(g, schema)?;
        let ps = spans_from_labels(p, schema)?;
        let gset: HashSet<_> = gs.iter().copied().collect();
        for s in &gs {
            per[s.etype].gold += 1;
        }
        for s in &ps {
            per[s.etype].pred += 1;
            if gset.contains(s) {
                per[s.etype].tp += 1;
            }
        }
    }
    let total = per.iter().fold(SpanCounts::default(), |acc, c| SpanCounts {
        tp: acc.tp + c.tp,
        pred: acc.pred + c.pred,
        gold: acc.gold + c.gold,
    });
    Ok(Metrics::from_counts(
        total,
        schema.entity_types().iter().cloned().zip(per).collect(),
    ))
}

/// Gold class (rows) × predicted class (columns) token counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTable {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionTable {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Each row divided by its sum; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .chunks(self.classes)
            .map(|row| {
                let sum: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if sum == 0 { 0.0 } else { c as f64 / sum as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self, schema: &LabelSchema) -> String {
        let names = schema.label_names();
        let mut s = String::from("gold\\pred");
        for n in &names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (g, row) in self.counts.chunks(self.classes).enumerate() {
            s.push_str(&names[g]);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn token_confusion(
    gold: &[LabelSequence],
    pred: &[LabelSequence],
    schema: &LabelSchema,
) -> Result<ConfusionTable> {
    check_aligned(gold, pred)?;
    let c = schema.num_labels();
    let mut counts = vec![0u64; c * c];
    for (g, p) in gold.iter().zip(pred) {
        for (&gl, &pl) in g.0.iter().zip(&p.0) {
            if gl >= c || pl >= c {
                return Err(Error::Schema(format!("label index out of range: {gl}/{pl}")));
            }
            counts[gl * c + pl] += 1;
        }
    }
    Ok(ConfusionTable { classes: c, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{labels_from_spans, EntitySpan};

    fn schema() -> LabelSchema {
        LabelSchema::conll()
    }

    fn labels(spans: &[EntitySpan], n: usize) -> LabelSequence {
        labels_from_spans(spans, n, &schema()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = vec![labels(&[EntitySpan::new(0, 1, 0)], 3)];
        let m = entity_prf(&g, &g, &schema()).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert_eq!(m.summary_line(), "100.00 (100.00/100.00)");
    }

    #[test]
    fn boundary_error_counts_as_miss() {
        let g = vec![labels(&[EntitySpan::new(0, 1, 0), EntitySpan::new(3, 3, 1)], 5)];
        let p = vec![labels(&[EntitySpan::new(0, 1, 0), EntitySpan::new(3, 4, 1)], 5)];
        let m = entity_prf(&g, &p, &schema()).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        assert_eq!(m.summary_line(), "50.00 (50.00/50.00)");
        assert_eq!(m.per_type[0].f1, 1.0);
        assert_eq!(m.per_type[1].counts, SpanCounts { tp: 0, pred: 1, gold: 1 });
    }

    #[test]
    fn empty_prediction() {
        let g = vec![labels(&[EntitySpan::new(0, 1, 0)], 3)];
        let p = vec![LabelSequence::outside(3)];
        let m = entity_prf(&g, &p, &schema()).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.summary_line(), "0.00 (0.00/0.00)");
    }

    #[test]
    fn misaligned_layers_rejected() {
        let g = vec![LabelSequence::outside(3)];
        assert!(entity_prf(&g, &[LabelSequence::outside(2)], &schema()).is_err());
        assert!(entity_prf(&g, &[], &schema()).is_err());
    }

    #[test]
    fn json_is_fixed_precision() {
        let g = vec![labels(&[EntitySpan::new(0, 0, 0), EntitySpan::new(2, 2, 0)], 3)];
        let p = vec![labels(&[EntitySpan::new(0, 0, 0)], 3)];
        let json = entity_prf(&g, &p, &schema()).unwrap().to_json();
        assert!(json.contains("\"precision\": 1.000000"));
        assert!(json.contains("\"recall\": 0.500000"));
        assert!(json.contains("\"f1\": 0.666667"));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["per_type"]["PER"]["gold_count"], 2);
    }

    #[test]
    fn confusion_counts() {
        let s = schema();
        let g = vec![labels(&[EntitySpan::new(0, 0, 0)], 2)];
        let p = vec![LabelSequence::outside(2)];
        let t = token_confusion(&g, &p, &s).unwrap();
        assert_eq!(t.get(1, 0), 1);
        assert_eq!(t.get(0, 0), 1);
        assert_eq!(t.total(), 2);

        let diag = token_confusion(&g, &g, &s).unwrap();
        for a in 0..9 {
            for b in 0..9 {
                if a != b {
                    assert_eq!(diag.get(a, b), 0);
                }
            }
        }
        let norm = t.row_normalized();
        assert_eq!(norm[1][0], 1.0);
        assert!(t.to_csv(&s).starts_with("gold\\pred,O,B-PER"));
    }
}
