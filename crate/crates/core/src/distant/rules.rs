//! Capitalisation-based candidate spans and stamp-word typing rules.

use std::path::Path;

use crate::corpus::{EntitySpan, LabelSchema, Sentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StampPosition {
    Head,
    Tail,
}

/// A token such as `Inc.` that types the candidate it heads or ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StampRule {
    pub stamp: String,
    pub etype: usize,
    pub position: StampPosition,
}

impl StampRule {
    pub fn new(stamp: impl Into<String>, etype: usize, position: StampPosition) -> Result<Self> {
        let stamp = stamp.into();
        if stamp.is_empty() {
            return Err(Error::Config("empty stamp word".into()));
        }
        Ok(StampRule {
            stamp,
            etype,
            position,
        })
    }

    fn fires(&self, words: &[&str]) -> bool {
        let tok = match self.position {
            StampPosition::Head => words.first(),
            StampPosition::Tail => words.last(),
        };
        tok.is_some_and(|t| *t == self.stamp)
    }
}

/// `stamp<TAB>type<TAB>head|tail` per line; `#` comments and blank lines are
/// skipped.
pub fn parse_stamp_rules(text: &str, schema: &LabelSchema) -> Result<Vec<StampRule>> {
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [stamp, etype, pos] = fields[..] else {
            return Err(bad(format!("expected 3 tab-separated fields, found {}", fields.len())));
        };
        let etype = schema
            .type_index(etype)
            .ok_or_else(|| bad(format!("unknown entity type {etype:?}")))?;
        let position = match pos {
            "head" => StampPosition::Head,
            "tail" => StampPosition::Tail,
            other => return Err(bad(format!("position must be head or tail, got {other:?}"))),
        };
        rules.push(StampRule::new(stamp, etype, position).map_err(|e| bad(e.to_string()))?);
    }
    Ok(rules)
}

pub fn load_stamp_rules(path: &Path, schema: &LabelSchema) -> Result<Vec<StampRule>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stamp_rules(&text, schema)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateOrigin {
    /// Overlaps a gazetteer match; left to the gazetteer.
    Gazetteer,
    /// Unmatched; eligible for stamp rules.
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateSpan {
    pub start: usize,
    pub end: usize,
    pub origin: CandidateOrigin,
}

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

fn is_all_caps(tok: &str) -> bool {
    let mut letters = 0;
    for c in tok.chars().filter(|c| c.is_alphabetic()) {
        if !c.is_uppercase() {
            return false;
        }
        letters += 1;
    }
    letters >= 2
}

pub fn generate_candidates(sentence: &Sentence) -> Vec<CandidateSpan> {
    generate_candidates_with(sentence, &vec![false; sentence.len()])
}

/// Maximal runs of capitalised tokens. The sentence-initial token joins a run
/// only when it is all-caps, flagged in `known`, or followed by another
/// capitalised token.
pub fn generate_candidates_with(sentence: &Sentence, known: &[bool]) -> Vec<CandidateSpan> {
    let words: Vec<&str> = sentence.words().collect();
    let eligible: Vec<bool> = words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let cap = is_capitalized(w);
            if i > 0 {
                return cap;
            }
            cap && (is_all_caps(w)
                || known.first().copied().unwrap_or(false)
                || words.get(1).is_some_and(|next| is_capitalized(next)))
        })
        .collect();

    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        if !eligible[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < words.len() && eligible[i + 1] {
            i += 1;
        }
        out.push(CandidateSpan {
            start,
            end: i,
            origin: CandidateOrigin::Rule,
        });
        i += 1;
    }
    out
}

/// Types each rule-eligible candidate of two or more tokens whose head or
/// tail is a stamp word. Stamps compare case-sensitively. Candidates hit by
/// rules of different types are dropped.
pub fn apply_stamp_rules(
    candidates: &[CandidateSpan],
    rules: &[StampRule],
    sentence: &Sentence,
) -> Vec<EntitySpan> {
    let words: Vec<&str> = sentence.words().collect();
    let mut out = Vec::new();
    for c in candidates {
        if c.origin != CandidateOrigin::Rule || c.end <= c.start || c.end >= words.len() {
            continue;
        }
        let span = &words[c.start..=c.end];
        let mut etype: Option<usize> = None;
        let mut conflict = false;
        for r in rules.iter().filter(|r| r.fires(span)) {
            match etype {
                None => etype = Some(r.etype),
                Some(t) if t != r.etype => conflict = true,
                Some(_) => {}
            }
        }
        if let (Some(t), false) = (etype, conflict) {
            out.push(EntitySpan::new(c.start, c.end, t));
        }
    }
    out
}
