//! Token-level phrase trie with longest-match resolution.

use std::collections::HashMap;

use super::gazetteer::{fold, KnowledgeSource};
use crate::corpus::{EntitySpan, LabelSchema, Sentence};

#[derive(Debug, Default, Clone)]
struct Node {
    children: HashMap<String, usize>,
    /// Sorted schema type indices of phrases ending here.
    types: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PhraseMatcher {
    nodes: Vec<Node>,
    max_depth: usize,
}

/// One resolved gazetteer hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GazetteerMatch {
    Entity(EntitySpan),
    /// Matched phrases of two or more types; labelled `O`.
    Ambiguous { start: usize, end: usize },
}

impl GazetteerMatch {
    pub fn range(&self) -> (usize, usize) {
        match *self {
            GazetteerMatch::Entity(s) => (s.start, s.end),
            GazetteerMatch::Ambiguous { start, end } => (start, end),
        }
    }
}

impl PhraseMatcher {
    /// Builds one trie over all sources. Types missing from the schema are
    /// ignored.
    pub fn build(sources: &[&dyn KnowledgeSource], schema: &LabelSchema) -> Self {
        let mut m = PhraseMatcher {
            nodes: vec![Node::default()],
            max_depth: 0,
        };
        for src in sources {
            for (etype, phrase) in src.phrases() {
                if let Some(t) = schema.type_index(etype) {
                    m.insert(phrase, t);
                }
            }
        }
        m
    }

    fn insert(&mut self, phrase: &[String], etype: usize) {
        if phrase.is_empty() {
            return;
        }
        let mut node = 0;
        for tok in phrase {
            node = match self.nodes[node].children.get(tok) {
                Some(&n) => n,
                None => {
                    let n = self.nodes.len();
                    self.nodes.push(Node::default());
                    self.nodes[node].children.insert(tok.clone(), n);
                    n
                }
            };
        }
        let types = &mut self.nodes[node].types;
        if let Err(pos) = types.binary_search(&etype) {
            types.insert(pos, etype);
        }
        self.max_depth = self.max_depth.max(phrase.len());
    }

    pub fn is_empty(&self) -> bool {
        self.max_depth == 0
    }

    /// Every phrase occurrence as `(start, end, types)`, unresolved.
    pub fn raw_matches(&self, sentence: &Sentence) -> Vec<(usize, usize, &[usize])> {
        let folded: Vec<String> = sentence.words().map(fold).collect();
        let mut out = Vec::new();
        for start in 0..folded.len() {
            let mut node = 0;
            for (end, tok) in folded.iter().enumerate().skip(start) {
                match self.nodes[node].children.get(tok) {
                    Some(&n) => node = n,
                    None => break,
                }
                if !self.nodes[node].types.is_empty() {
                    out.push((start, end, self.nodes[node].types.as_slice()));
                }
            }
        }
        out
    }

    /// Case-folded exact matching. Matches strictly inside another match are
    /// dropped; the rest are taken greedily by length, then leftmost start,
    /// then schema type order. A span carrying several types is ambiguous.
    pub fn match_sentence(&self, sentence: &Sentence) -> Vec<GazetteerMatch> {
        let raw = self.raw_matches(sentence);
        let mut cands: Vec<_> = raw
            .iter()
            .filter(|&&(s, e, _)| {
                !raw.iter()
                    .any(|&(s2, e2, _)| (s2, e2) != (s, e) && s2 <= s && e <= e2)
            })
            .collect();
        cands.sort_by_key(|&&(s, e, types)| (std::cmp::Reverse(e - s), s, types[0]));

        let mut taken = vec![false; sentence.len()];
        let mut picked = Vec::new();
        for &&(s, e, types) in &cands {
            if taken[s..=e].iter().any(|&t| t) {
                continue;
            }
            taken[s..=e].iter_mut().for_each(|t| *t = true);
            picked.push(if types.len() == 1 {
                GazetteerMatch::Entity(EntitySpan::new(s, e, types[0]))
            } else {
                GazetteerMatch::Ambiguous { start: s, end: e }
            });
        }
        picked.sort_by_key(GazetteerMatch::range);
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distant::Gazetteer;

    fn matcher(entries: &[(&str, &str)]) -> PhraseMatcher {
        let mut g = Gazetteer::new("t");
        for (t, p) in entries {
            g.insert(t, p);
        }
        PhraseMatcher::build(&[&g], &LabelSchema::conll())
    }

    fn sent(text: &str) -> Sentence {
        Sentence::new("d", text.split(' ')).unwrap()
    }

    #[test]
    fn case_folded_match() {
        let m = matcher(&[("LOC", "new york")]);
        assert_eq!(
            m.match_sentence(&sent("I love New York .")),
            vec![GazetteerMatch::Entity(EntitySpan::new(2, 3, 1))]
        );
    }

    #[test]
    fn longest_match_wins() {
        let m = matcher(&[("LOC", "new york"), ("ORG", "new york times")]);
        assert_eq!(
            m.match_sentence(&sent("read the New York Times today")),
            vec![GazetteerMatch::Entity(EntitySpan::new(2, 4, 2))]
        );
    }

    #[test]
    fn multi_type_span_is_ambiguous() {
        let m = matcher(&[("LOC", "liverpool"), ("ORG", "liverpool")]);
        assert_eq!(
            m.match_sentence(&sent("Liverpool won")),
            vec![GazetteerMatch::Ambiguous { start: 0, end: 0 }]
        );
    }

    #[test]
    fn equal_length_overlap_prefers_leftmost() {
        let m = matcher(&[("PER", "a b"), ("LOC", "b c")]);
        assert_eq!(
            m.match_sentence(&sent("a b c")),
            vec![GazetteerMatch::Entity(EntitySpan::new(0, 1, 0))]
        );
    }

    #[test]
    fn dominated_match_is_not_emitted() {
        // "b c d e" wins on length; "a b c" loses the overlap but still
        // dominates "a", which therefore stays unlabelled.
        let m = matcher(&[("PER", "a"), ("LOC", "a b c"), ("ORG", "b c d e")]);
        assert_eq!(
            m.match_sentence(&sent("a b c d e")),
            vec![GazetteerMatch::Entity(EntitySpan::new(1, 4, 2))]
        );
    }
}
