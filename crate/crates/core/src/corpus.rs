//! Tokenized corpora, the BIO label schema and CoNLL column I/O.
//!
//! Label indices follow one fixed layout: `O` is 0, and entity type `k`
//! (in declaration order) owns `B-X = 1 + 2k` and `I-X = 2 + 2k`. All label
//! layers held by a [`Corpus`] are strict BIO; IOB1 input is repaired on
//! ingest.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub doc_id: String,
}

impl Sentence {
    pub fn new<I, S>(doc_id: impl Into<String>, words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = Vec::new();
        for (index, w) in words.into_iter().enumerate() {
            let text: String = w.into();
            if text.is_empty() || text.chars().any(char::is_whitespace) {
                return Err(Error::Schema(format!(
                    "token {index} is empty or contains whitespace: {text:?}"
                )));
            }
            tokens.push(Token { text, index });
        }
        if tokens.is_empty() {
            return Err(Error::Schema("sentence has no tokens".into()));
        }
        Ok(Sentence {
            tokens,
            doc_id: doc_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> + '_ {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}

/// A decoded label index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

impl Tag {
    pub fn etype(self) -> Option<usize> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSchema {
    entity_types: Vec<String>,
}

impl LabelSchema {
    pub fn new<I, S>(entity_types: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entity_types: Vec<String> = entity_types.into_iter().map(Into::into).collect();
        for (i, t) in entity_types.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Schema(format!("bad entity type name {t:?}")));
            }
            if entity_types[..i].contains(t) {
                return Err(Error::Schema(format!("duplicate entity type {t}")));
            }
        }
        Ok(LabelSchema { entity_types })
    }

    /// The four CoNLL-2003 types.
    pub fn conll() -> Self {
        LabelSchema::new(["PER", "LOC", "ORG", "MISC"]).expect("static schema")
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    /// Number of classes `C = 2·|types| + 1`.
    pub fn num_labels(&self) -> usize {
        2 * self.entity_types.len() + 1
    }

    pub fn begin(&self, etype: usize) -> usize {
        1 + 2 * etype
    }

    pub fn inside(&self, etype: usize) -> usize {
        2 + 2 * etype
    }

    pub fn tag(&self, label: usize) -> Tag {
        match label {
            0 => Tag::Outside,
            l if l % 2 == 1 => Tag::Begin((l - 1) / 2),
            l => Tag::Inside((l - 2) / 2),
        }
    }

    pub fn label_name(&self, label: usize) -> String {
        match self.tag(label) {
            Tag::Outside => "O".to_string(),
            Tag::Begin(t) => format!("B-{}", self.entity_types[t]),
            Tag::Inside(t) => format!("I-{}", self.entity_types[t]),
        }
    }

    pub fn label_names(&self) -> Vec<String> {
        (0..self.num_labels()).map(|l| self.label_name(l)).collect()
    }

    pub fn parse_label(&self, name: &str) -> Option<usize> {
        if name == "O" {
            return Some(0);
        }
        let (prefix, etype) = name.split_once('-')?;
        let t = self.type_index(etype)?;
        match prefix {
            "B" => Some(self.begin(t)),
            "I" => Some(self.inside(t)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LabelSequence(pub Vec<usize>);

impl LabelSequence {
    pub fn outside(len: usize) -> Self {
        LabelSequence(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// An entity over the inclusive token range `start..=end`. `etype` indexes
/// [`LabelSchema::entity_types`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: usize,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, etype: usize) -> Self {
        EntitySpan { start, end, etype }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BioVerdict {
    Valid,
    Invalid { position: usize },
}

impl BioVerdict {
    pub fn is_valid(self) -> bool {
        self == BioVerdict::Valid
    }
}

/// Checks the strict BIO invariant: `I-X` only directly after `B-X` or `I-X`.
/// Out-of-range indices are reported as violations too.
pub fn validate_bio(labels: &LabelSequence, schema: &LabelSchema) -> BioVerdict {
    let c = schema.num_labels();
    let mut prev = Tag::Outside;
    for (position, &l) in labels.0.iter().enumerate() {
        if l >= c {
            return BioVerdict::Invalid { position };
        }
        let tag = schema.tag(l);
        if let Tag::Inside(t) = tag {
            if prev.etype() != Some(t) {
                return BioVerdict::Invalid { position };
            }
        }
        prev = tag;
    }
    BioVerdict::Valid
}

/// Rewrites every `I-X` lacking a valid opener into `B-X`. This is both the
/// IOB1 → BIO conversion and the repair applied to raw model output.
pub fn repair_bio(labels: &[usize], schema: &LabelSchema) -> LabelSequence {
    let mut out = Vec::with_capacity(labels.len());
    let mut prev = Tag::Outside;
    for &l in labels {
        let tag = match schema.tag(l) {
            Tag::Inside(t) if prev.etype() != Some(t) => Tag::Begin(t),
            tag => tag,
        };
        out.push(match tag {
            Tag::Outside => 0,
            Tag::Begin(t) => schema.begin(t),
            Tag::Inside(t) => schema.inside(t),
        });
        prev = tag;
    }
    LabelSequence(out)
}

/// Maximal B/I runs, in order of start position.
pub fn spans_from_labels(labels: &LabelSequence, schema: &LabelSchema) -> Result<Vec<EntitySpan>> {
    if let BioVerdict::Invalid { position } = validate_bio(labels, schema) {
        return Err(Error::InvalidBio { position });
    }
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, &l) in labels.0.iter().enumerate() {
        match schema.tag(l) {
            Tag::Outside => spans.extend(open.take()),
            Tag::Begin(t) => {
                spans.extend(open.take());
                open = Some(EntitySpan::new(i, i, t));
            }
            Tag::Inside(_) => {
                if let Some(s) = open.as_mut() {
                    s.end = i;
                }
            }
        }
    }
    spans.extend(open);
    Ok(spans)
}

pub fn labels_from_spans(
    spans: &[EntitySpan],
    len: usize,
    schema: &LabelSchema,
) -> Result<LabelSequence> {
    let mut labels = vec![0usize; len];
    let mut taken = vec![false; len];
    for s in spans {
        if s.start > s.end || s.end >= len {
            return Err(Error::Span(format!(
                "span {}..={} out of range for length {len}",
                s.start, s.end
            )));
        }
        if s.etype >= schema.entity_types().len() {
            return Err(Error::Span(format!("unknown entity type index {}", s.etype)));
        }
        if taken[s.start..=s.end].iter().any(|&t| t) {
            return Err(Error::Span(format!(
                "span {}..={} overlaps another span",
                s.start, s.end
            )));
        }
        taken[s.start..=s.end].iter_mut().for_each(|t| *t = true);
        labels[s.start] = schema.begin(s.etype);
        for l in &mut labels[s.start + 1..=s.end] {
            *l = schema.inside(s.etype);
        }
    }
    Ok(LabelSequence(labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Gold,
    Distant,
}

impl Layer {
    fn name(self) -> &'static str {
        match self {
            Layer::Gold => "gold",
            Layer::Distant => "distant",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sentences plus optional gold and distant label layers sharing one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    schema: LabelSchema,
    sentences: Vec<Sentence>,
    gold: Option<Vec<LabelSequence>>,
    distant: Option<Vec<LabelSequence>>,
}

impl Corpus {
    pub fn new(schema: LabelSchema, sentences: Vec<Sentence>) -> Self {
        Corpus {
            schema,
            sentences,
            gold: None,
            distant: None,
        }
    }

    /// Attaches a label layer after checking alignment and BIO validity.
    pub fn with_layer(mut self, layer: Layer, labels: Vec<LabelSequence>) -> Result<Self> {
        self.set_layer(layer, labels)?;
        Ok(self)
    }

    pub fn set_layer(&mut self, layer: Layer, labels: Vec<LabelSequence>) -> Result<()> {
        if labels.len() != self.sentences.len() {
            return Err(Error::Shape(format!(
                "{layer} layer has {} sequences for {} sentences",
                labels.len(),
                self.sentences.len()
            )));
        }
        for (m, (l, s)) in labels.iter().zip(&self.sentences).enumerate() {
            if l.len() != s.len() {
                return Err(Error::Shape(format!(
                    "{layer} layer sentence {m}: {} labels for {} tokens",
                    l.len(),
                    s.len()
                )));
            }
            if let BioVerdict::Invalid { position } = validate_bio(l, &self.schema) {
                return Err(Error::InvalidBio { position });
            }
        }
        match layer {
            Layer::Gold => self.gold = Some(labels),
            Layer::Distant => self.distant = Some(labels),
        }
        Ok(())
    }

    pub fn clear_layer(&mut self, layer: Layer) {
        match layer {
            Layer::Gold => self.gold = None,
            Layer::Distant => self.distant = None,
        }
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn has_layer(&self, layer: Layer) -> bool {
        self.layer_opt(layer).is_some()
    }

    pub fn layer(&self, layer: Layer) -> Result<&[LabelSequence]> {
        self.layer_opt(layer)
            .map(Vec::as_slice)
            .ok_or(Error::MissingLayer(layer.name()))
    }

    fn layer_opt(&self, layer: Layer) -> Option<&Vec<LabelSequence>> {
        match layer {
            Layer::Gold => self.gold.as_ref(),
            Layer::Distant => self.distant.as_ref(),
        }
    }
}

/// Parses CoNLL column text; the last column (if more than one) is the tag and
/// lands in the gold layer.
pub fn parse_conll(input: &str, schema: &LabelSchema) -> Result<Corpus> {
    parse_conll_into(input, schema, Layer::Gold)
}

/// Like [`parse_conll`] but stores the tag column in `layer`.
pub fn parse_conll_into(input: &str, schema: &LabelSchema, layer: Layer) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut labels = Vec::new();
    let mut columns: Option<usize> = None;
    let mut words: Vec<String> = Vec::new();
    let mut tags: Vec<usize> = Vec::new();
    let mut doc = 0usize;

    let mut flush = |words: &mut Vec<String>, tags: &mut Vec<usize>, doc: usize| -> Result<()> {
        if words.is_empty() {
            return Ok(());
        }
        sentences.push(Sentence::new(format!("doc{doc}"), words.drain(..))?);
        labels.push(repair_bio(tags, schema));
        tags.clear();
        Ok(())
    };

    for (lineno, raw) in input.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            flush(&mut words, &mut tags, doc)?;
            continue;
        }
        let expected = *columns.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {expected} columns, found {}", fields.len()),
            });
        }
        if fields[0] == "-DOCSTART-" {
            flush(&mut words, &mut tags, doc)?;
            doc += 1;
            continue;
        }
        if expected > 1 {
            let tag = fields[expected - 1];
            let l = schema.parse_label(tag).ok_or_else(|| {
                Error::Schema(format!("line {}: unknown tag {tag:?}", lineno + 1))
            })?;
            tags.push(l);
        }
        words.push(fields[0].to_string());
    }
    flush(&mut words, &mut tags, doc)?;

    let mut corpus = Corpus::new(schema.clone(), sentences);
    if columns.is_some_and(|c| c > 1) {
        corpus.set_layer(layer, labels)?;
    }
    Ok(corpus)
}

pub fn read_conll(path: &Path, schema: &LabelSchema, layer: Layer) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll_into(&text, schema, layer)
}

/// Two-column `token tag` output, one blank line between sentences.
pub fn write_conll(corpus: &Corpus, layer: Layer) -> Result<String> {
    let labels = corpus.layer(layer)?;
    let schema = corpus.schema();
    let mut out = String::new();
    for (m, (s, l)) in corpus.sentences().iter().zip(labels).enumerate() {
        if m > 0 {
            out.push('\n');
        }
        for (tok, &label) in s.tokens.iter().zip(&l.0) {
            out.push_str(&tok.text);
            out.push(' ');
            out.push_str(&schema.label_name(label));
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> LabelSchema {
        LabelSchema::conll()
    }

    fn seq(names: &[&str]) -> LabelSequence {
        let s = schema();
        LabelSequence(names.iter().map(|n| s.parse_label(n).unwrap()).collect())
    }

    #[test]
    fn label_layout_is_fixed() {
        let s = schema();
        assert_eq!(s.num_labels(), 9);
        assert_eq!(
            s.label_names(),
            ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC"]
        );
        for l in 0..9 {
            assert_eq!(s.parse_label(&s.label_name(l)), Some(l));
        }
        assert_eq!(s.parse_label("B-FOO"), None);
        assert_eq!(s.parse_label("E-PER"), None);
    }

    #[test]
    fn parse_repairs_iob1() {
        let c = parse_conll("EU I-ORG\nrejects O\n", &schema()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.layer(Layer::Gold).unwrap()[0], seq(&["B-ORG", "O"]));
    }

    #[test]
    fn parse_simple_and_multi() {
        let c = parse_conll("Hello O\n", &schema()).unwrap();
        assert_eq!(c.layer(Layer::Gold).unwrap()[0], seq(&["O"]));

        let c = parse_conll("a O\nb O\n\nc B-PER\n", &schema()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences()[1].tokens[0].text, "c");
    }

    #[test]
    fn parse_crlf_docstart_and_unlabeled() {
        let text = "-DOCSTART- -X- O\r\n\r\nEU NNP I-ORG\r\nrejects VBZ O\r\n\r\n-DOCSTART- -X- O\r\nx NN O\r\n";
        let c = parse_conll(text, &schema()).unwrap();
        assert_eq!(c.len(), 2);
        assert_ne!(c.sentences()[0].doc_id, c.sentences()[1].doc_id);
        assert_eq!(c.layer(Layer::Gold).unwrap()[0], seq(&["B-ORG", "O"]));

        let c = parse_conll("just\nwords\n\nhere\n", &schema()).unwrap();
        assert_eq!(c.len(), 2);
        assert!(!c.has_layer(Layer::Gold));
    }

    #[test]
    fn parse_errors() {
        let err = parse_conll("a O\nb\n", &schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_conll("a B-FOO\n", &schema()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn write_roundtrip_and_separators() {
        let c = parse_conll("EU I-ORG\nrejects O\n", &schema()).unwrap();
        let text = write_conll(&c, Layer::Gold).unwrap();
        assert_eq!(text, "EU B-ORG\nrejects O\n");
        assert_eq!(parse_conll(&text, &schema()).unwrap().layer(Layer::Gold).unwrap(), c.layer(Layer::Gold).unwrap());

        let empty = Corpus::new(schema(), vec![]).with_layer(Layer::Gold, vec![]).unwrap();
        assert_eq!(write_conll(&empty, Layer::Gold).unwrap(), "");

        let c = parse_conll("a O\n\nb O\n\nc O\n", &schema()).unwrap();
        let text = write_conll(&c, Layer::Gold).unwrap();
        assert_eq!(text.matches("\n\n").count(), 2);

        assert!(matches!(
            write_conll(&c, Layer::Distant),
            Err(Error::MissingLayer("distant"))
        ));
    }

    #[test]
    fn bio_validation() {
        let s = schema();
        assert!(validate_bio(&seq(&["B-PER", "I-PER", "O"]), &s).is_valid());
        assert_eq!(
            validate_bio(&seq(&["O", "I-LOC"]), &s),
            BioVerdict::Invalid { position: 1 }
        );
        assert_eq!(
            validate_bio(&seq(&["B-PER", "I-ORG"]), &s),
            BioVerdict::Invalid { position: 1 }
        );
        assert_eq!(
            validate_bio(&LabelSequence(vec![0, 42]), &s),
            BioVerdict::Invalid { position: 1 }
        );
    }

    #[test]
    fn span_extraction() {
        let s = schema();
        let (per, loc, org) = (0, 1, 2);
        assert_eq!(
            spans_from_labels(&seq(&["B-ORG", "I-ORG", "O", "B-PER"]), &s).unwrap(),
            vec![EntitySpan::new(0, 1, org), EntitySpan::new(3, 3, per)]
        );
        assert!(spans_from_labels(&seq(&["O", "O"]), &s).unwrap().is_empty());
        assert_eq!(
            spans_from_labels(&seq(&["B-LOC", "B-LOC"]), &s).unwrap(),
            vec![EntitySpan::new(0, 0, loc), EntitySpan::new(1, 1, loc)]
        );
        assert!(matches!(
            spans_from_labels(&seq(&["I-LOC"]), &s),
            Err(Error::InvalidBio { position: 0 })
        ));
    }

    #[test]
    fn span_encoding() {
        let s = schema();
        assert_eq!(
            labels_from_spans(&[EntitySpan::new(0, 1, 0)], 3, &s).unwrap(),
            seq(&["B-PER", "I-PER", "O"])
        );
        assert_eq!(labels_from_spans(&[], 2, &s).unwrap(), seq(&["O", "O"]));
        assert_eq!(
            labels_from_spans(&[EntitySpan::new(2, 2, 1)], 3, &s).unwrap(),
            seq(&["O", "O", "B-LOC"])
        );
        assert!(labels_from_spans(&[EntitySpan::new(0, 1, 0), EntitySpan::new(1, 2, 1)], 3, &s).is_err());
        assert!(labels_from_spans(&[EntitySpan::new(2, 3, 0)], 3, &s).is_err());
    }

    #[test]
    fn repair_rules() {
        let s = schema();
        let raw = |names: &[&str]| seq(names).0;
        assert_eq!(repair_bio(&raw(&["O", "I-LOC"]), &s), seq(&["O", "B-LOC"]));
        assert_eq!(repair_bio(&raw(&["I-PER", "I-PER"]), &s), seq(&["B-PER", "I-PER"]));
        let valid = seq(&["B-PER", "I-PER", "O", "B-LOC"]);
        assert_eq!(repair_bio(&valid.0, &s), valid);
        assert_eq!(repair_bio(&raw(&["B-PER", "I-ORG"]), &s), seq(&["B-PER", "B-ORG"]));
    }

    #[test]
    fn layer_alignment_checked() {
        let c = parse_conll("a\nb\n", &schema()).unwrap();
        assert!(c.clone().with_layer(Layer::Distant, vec![LabelSequence::outside(1)]).is_err());
        assert!(c.clone().with_layer(Layer::Distant, vec![LabelSequence(vec![0, 2])]).is_err());
        assert!(c.with_layer(Layer::Distant, vec![LabelSequence::outside(2)]).is_ok());
    }

    #[test]
    fn sentence_invariants() {
        assert!(Sentence::new("d", Vec::<String>::new()).is_err());
        assert!(Sentence::new("d", ["a b"]).is_err());
        assert!(Sentence::new("d", [""]).is_err());
        let s = Sentence::new("d", ["x", "y"]).unwrap();
        assert_eq!(s.tokens[1].index, 1);
    }
}
