//! Distant label generation: gazetteer matching first, then stamp-word rules
//! over the remaining capitalised candidates. Ambiguous evidence yields `O`.

mod gazetteer;
mod matcher;
mod rules;

use rayon::prelude::*;
use serde::Serialize;

pub use gazetteer::{load_gazetteer, load_gazetteer_dir, Gazetteer, KnowledgeSource};
pub use matcher::{GazetteerMatch, PhraseMatcher};
pub use rules::{
    apply_stamp_rules, generate_candidates, generate_candidates_with, load_stamp_rules,
    parse_stamp_rules, CandidateOrigin, CandidateSpan, StampPosition, StampRule,
};

use crate::corpus::{
    labels_from_spans, spans_from_labels, Corpus, EntitySpan, LabelSchema, LabelSequence, Layer,
    Sentence, Tag,
};
use crate::error::Result;
use crate::eval::{entity_prf, harmonic, Metrics};

pub struct DistantLabeler {
    schema: LabelSchema,
    matcher: PhraseMatcher,
    rules: Vec<StampRule>,
}

/// Labels for one sentence plus the ranges discarded as ambiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceLabeling {
    pub labels: LabelSequence,
    pub ambiguous: Vec<(usize, usize)>,
}

impl DistantLabeler {
    pub fn new(
        schema: LabelSchema,
        sources: &[&dyn KnowledgeSource],
        rules: Vec<StampRule>,
    ) -> Self {
        let matcher = PhraseMatcher::build(sources, &schema);
        DistantLabeler {
            schema,
            matcher,
            rules,
        }
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn match_gazetteer(&self, sentence: &Sentence) -> Vec<GazetteerMatch> {
        self.matcher.match_sentence(sentence)
    }

    pub fn label_sentence(&self, sentence: &Sentence) -> SentenceLabeling {
        let matches = self.matcher.match_sentence(sentence);
        let mut occupied = vec![false; sentence.len()];
        let mut spans = Vec::new();
        let mut ambiguous = Vec::new();
        for m in &matches {
            let (s, e) = m.range();
            occupied[s..=e].iter_mut().for_each(|o| *o = true);
            match *m {
                GazetteerMatch::Entity(span) => spans.push(span),
                GazetteerMatch::Ambiguous { start, end } => ambiguous.push((start, end)),
            }
        }

        let mut candidates = generate_candidates_with(sentence, &occupied);
        for c in &mut candidates {
            if occupied[c.start..=c.end].iter().any(|&o| o) {
                c.origin = CandidateOrigin::Gazetteer;
            }
        }
        spans.extend(apply_stamp_rules(&candidates, &self.rules, sentence));
        spans.sort();

        let labels = labels_from_spans(&spans, sentence.len(), &self.schema)
            .expect("gazetteer and rule spans are disjoint and in range");
        SentenceLabeling { labels, ambiguous }
    }
}

/// Result of labelling a whole corpus.
#[derive(Debug, Clone)]
pub struct DistantLabeling {
    pub corpus: Corpus,
    pub ambiguous: Vec<Vec<(usize, usize)>>,
}

/// Attaches (or replaces) the distant layer. Sentences are independent, so
/// the work is spread over the rayon pool with no effect on the output.
pub fn generate_distant_labels(corpus: &Corpus, labeler: &DistantLabeler) -> Result<DistantLabeling> {
    let results: Vec<SentenceLabeling> = corpus
        .sentences()
        .par_iter()
        .map(|s| labeler.label_sentence(s))
        .collect();
    let (labels, ambiguous): (Vec<_>, Vec<_>) =
        results.into_iter().map(|r| (r.labels, r.ambiguous)).unzip();
    let corpus = corpus.clone().with_layer(Layer::Distant, labels)?;
    Ok(DistantLabeling { corpus, ambiguous })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TypeMatchCounts {
    pub etype: String,
    /// Gold spans reproduced exactly by the distant layer.
    pub matched: usize,
    /// Gold spans touched by a discarded ambiguous match.
    pub ambiguous: usize,
    pub unmatched: usize,
}

/// Quality of a distant layer against gold. `precision`/`recall`/`f1` are
/// entity level; the `token_*` fields count non-`O` tokens with the exact
/// gold label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub token_precision: f64,
    pub token_recall: f64,
    pub token_f1: f64,
    pub per_type: Vec<TypeMatchCounts>,
    #[serde(skip)]
    pub entity: Metrics,
}

impl MatchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// `ambiguous` holds the discarded ranges per sentence (empty when unknown).
pub fn match_report(corpus: &Corpus, ambiguous: &[Vec<(usize, usize)>]) -> Result<MatchReport> {
    let gold = corpus.layer(Layer::Gold)?;
    let distant = corpus.layer(Layer::Distant)?;
    let schema = corpus.schema();
    let entity = entity_prf(gold, distant, schema)?;

    let (mut tp, mut pred, mut gold_n) = (0usize, 0usize, 0usize);
    for (g, d) in gold.iter().zip(distant) {
        for (&gl, &dl) in g.0.iter().zip(&d.0) {
            pred += usize::from(dl != 0);
            gold_n += usize::from(gl != 0);
            tp += usize::from(dl != 0 && dl == gl);
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let token_precision = frac(tp, pred);
    let token_recall = frac(tp, gold_n);

    let mut per_type: Vec<TypeMatchCounts> = schema
        .entity_types()
        .iter()
        .map(|t| TypeMatchCounts {
            etype: t.clone(),
            ..Default::default()
        })
        .collect();
    for (m, (g, d)) in gold.iter().zip(distant).enumerate() {
        let dspans = spans_from_labels(d, schema)?;
        let amb = ambiguous.get(m).map(Vec::as_slice).unwrap_or(&[]);
        for gs in spans_from_labels(g, schema)? {
            let counts = &mut per_type[gs.etype];
            if dspans.contains(&gs) {
                counts.matched += 1;
            } else if amb.iter().any(|&(s, e)| gs.overlaps(&EntitySpan::new(s, e, gs.etype))) {
                counts.ambiguous += 1;
            } else {
                counts.unmatched += 1;
            }
        }
    }

    Ok(MatchReport {
        precision: entity.precision,
        recall: entity.recall,
        f1: entity.f1,
        token_precision,
        token_recall,
        token_f1: harmonic(token_precision, token_recall),
        per_type,
        entity,
    })
}

/// Non-`O` token count of a label sequence.
pub fn entity_token_count(labels: &LabelSequence, schema: &LabelSchema) -> usize {
    labels.0.iter().filter(|&&l| schema.tag(l) != Tag::Outside).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_conll, validate_bio};

    fn schema() -> LabelSchema {
        LabelSchema::conll()
    }

    fn corpus(text: &str) -> Corpus {
        parse_conll(text, &schema()).unwrap()
    }

    fn labeler(entries: &[(&str, &str)], rules: Vec<StampRule>) -> DistantLabeler {
        let mut g = Gazetteer::new("t");
        for (t, p) in entries {
            g.insert(t, p);
        }
        DistantLabeler::new(schema(), &[&g], rules)
    }

    #[test]
    fn unambiguous_match_labels_span() {
        let c = corpus("I O\nlove O\nNew B-LOC\nYork I-LOC\n. O\n");
        let out = generate_distant_labels(&c, &labeler(&[("LOC", "new york")], vec![])).unwrap();
        let d = &out.corpus.layer(Layer::Distant).unwrap()[0];
        assert_eq!(d.0, [0, 0, 3, 4, 0]);
    }

    #[test]
    fn ambiguous_match_is_discarded() {
        let c = corpus("Liverpool B-ORG\nwon O\n");
        let l = labeler(&[("LOC", "liverpool"), ("ORG", "liverpool")], vec![]);
        let out = generate_distant_labels(&c, &l).unwrap();
        assert_eq!(out.corpus.layer(Layer::Distant).unwrap()[0].0, [0, 0]);
        assert_eq!(out.ambiguous[0], [(0, 0)]);
        let r = match_report(&out.corpus, &out.ambiguous).unwrap();
        assert_eq!(r.per_type[2].ambiguous, 1);
    }

    #[test]
    fn empty_knowledge_gives_all_outside() {
        let c = corpus("Acme B-ORG\nInc. I-ORG\n\nBob B-PER\nsaid O\n");
        let out = generate_distant_labels(&c, &labeler(&[], vec![])).unwrap();
        for l in out.corpus.layer(Layer::Distant).unwrap() {
            assert!(l.0.iter().all(|&x| x == 0));
        }
    }

    #[test]
    fn rules_apply_to_unmatched_candidates() {
        let c = corpus("Acme B-ORG\nInc. I-ORG\nsaid O\n");
        let rule = StampRule::new("Inc.", 2, StampPosition::Tail).unwrap();
        let out = generate_distant_labels(&c, &labeler(&[], vec![rule.clone()])).unwrap();
        assert_eq!(out.corpus.layer(Layer::Distant).unwrap()[0].0, [5, 6, 0]);

        // A gazetteer hit on part of the candidate blocks the rule.
        let out = generate_distant_labels(&c, &labeler(&[("PER", "acme")], vec![rule])).unwrap();
        assert_eq!(out.corpus.layer(Layer::Distant).unwrap()[0].0, [1, 0, 0]);
        assert!(validate_bio(&out.corpus.layer(Layer::Distant).unwrap()[0], &schema()).is_valid());
    }

    #[test]
    fn report_values() {
        let text = "John B-PER\nSmith I-PER\nin O\nParis B-LOC\n";
        let c = corpus(text);

        let gold = c.layer(Layer::Gold).unwrap().to_vec();
        let same = c.clone().with_layer(Layer::Distant, gold).unwrap();
        let r = match_report(&same, &[]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

        let none = c.clone().with_layer(Layer::Distant, vec![LabelSequence::outside(4)]).unwrap();
        let r = match_report(&none, &[]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));

        let partial = c
            .clone()
            .with_layer(Layer::Distant, vec![LabelSequence(vec![1, 2, 0, 0])])
            .unwrap();
        let r = match_report(&partial, &[]).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.token_recall - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_type[1].unmatched, 1);
        assert!(r.to_json().contains("\"f1\""));

        assert!(match_report(&c, &[]).is_err());
    }
}
