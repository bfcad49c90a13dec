//! Seeded synthetic NER data with a deliberately imperfect gazetteer.
//!
//! Sentences are filled templates over four types (PER, LOC, ORG, MISC).
//! Names are invented from syllables; most carry a type-typical suffix or
//! stamp word. The gazetteer lists only part of each name pool, mistypes a
//! few entries, lists some names under two types, and contains common words
//! that also occur as non-entities, so distant labels are both incomplete
//! and noisy.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{labels_from_spans, write_conll, Corpus, EntitySpan, LabelSchema, Layer, Sentence};
use crate::distant::{Gazetteer, StampPosition, StampRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    /// Names per entity type.
    pub pool_size: usize,
    /// Share of names carrying type-typical morphology.
    pub suffix_rate: f64,
    /// Share of each type's typical-looking names listed in the gazetteer,
    /// in [`TYPES`] order.
    pub coverage: Vec<f64>,
    /// Multiplier on `coverage` for names without type-typical morphology.
    pub irregular_coverage: f64,
    /// Share of each pool that never occurs in the training corpus.
    pub heldout_rate: f64,
    /// Chance that a dev/test mention draws from the held-out names.
    pub heldout_mention_rate: f64,
    /// Share of listed names filed under a wrong type.
    pub mistype_rate: f64,
    /// Share of listed names filed under two types.
    pub ambiguous_rate: f64,
    /// Common words added to the gazetteer as entities.
    pub noise_entries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            train_sentences: 2400,
            dev_sentences: 400,
            test_sentences: 600,
            pool_size: 400,
            suffix_rate: 0.6,
            coverage: vec![0.85, 0.85, 0.85, 0.85],
            irregular_coverage: 0.0,
            heldout_rate: 0.3,
            heldout_mention_rate: 0.4,
            mistype_rate: 0.06,
            ambiguous_rate: 0.04,
            noise_entries: 15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub schema: LabelSchema,
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub gazetteer: Gazetteer,
    pub rules: Vec<StampRule>,
}

pub const TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];
const PER: usize = 0;
const LOC: usize = 1;
const ORG: usize = 2;
const MISC: usize = 3;

const ONSETS: [&str; 18] = [
    "b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "gr", "st", "ch",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

const FIRST_NAMES: [&str; 24] = [
    "John", "Maria", "Ahmed", "Yuki", "Pierre", "Olga", "Carlos", "Anna", "Li", "David", "Fatima",
    "Ivan", "Sarah", "Kofi", "Elena", "Paul", "Ingrid", "Raj", "Lucia", "Tom", "Hana", "Omar",
    "Greta", "Marco",
];
const PER_SUFFIXES: [&str; 5] = ["son", "ez", "ski", "ova", "sen"];
const LOC_SUFFIXES: [&str; 5] = ["burg", "ville", "stan", "grad", "port"];
const ORG_STAMPS: [&str; 4] = ["Corp", "Group", "Bank", "Inc."];
const MISC_SUFFIXES: [&str; 4] = ["ian", "ese", "ish", "ic"];

/// Capitalised words that occur as non-entities in the templates.
const COMMON_CAPS: [&str; 12] = [
    "Monday", "Tuesday", "Friday", "January", "March", "President", "Minister", "Reuters",
    "Government", "Police", "Chairman", "Premier",
];
/// Lowercase words that collide with case-folded gazetteer entries.
const COMMON_LOWER: [&str; 6] = ["may", "bill", "mark", "grant", "china", "will"];

/// Templates: `<PER>` etc. are entity slots, `<CAP>` a common capitalised
/// word, `<LOW>` a colliding lowercase word.
const TEMPLATES: [&str; 36] = [
    "<PER> said on <CAP> that <ORG> would open an office in <LOC> .",
    "<PER> , a spokesman for <ORG> , told reporters in <LOC> .",
    "<ORG> shares rose 3 percent after the <MISC> regulator approved the deal .",
    "the <MISC> delegation arrived in <LOC> late on <CAP> .",
    "<CAP> <PER> met <PER> in <LOC> to discuss the <MISC> proposal .",
    "police in <LOC> said two people were injured .",
    "<ORG> reported a net profit of 12 million dollars .",
    "according to <PER> , the talks <LOW> resume next week .",
    "the match between <LOC> and <LOC> ended in a draw .",
    "<PER> scored twice as <ORG> beat <ORG> 2 - 1 .",
    "analysts at <ORG> expect the <MISC> economy to grow .",
    "<PER> will travel to <LOC> and <LOC> next month .",
    "the <CAP> said prices <LOW> fall further .",
    "it was the first <MISC> win in <LOC> since 1994 .",
    "<ORG> , based in <LOC> , employs 4,000 people .",
    "<PER> told <ORG> the plan <LOW> not change .",
    "troops left <LOC> on <CAP> , officials said .",
    "the <MISC> team lost to <LOC> in the final .",
    "<PER> of <ORG> declined to comment .",
    "shares of <ORG> fell 2 percent in early trade .",
    "talks will continue in <LOC> , <PER> said .",
    "he said the <LOW> agreement was signed in <LOC> .",
    "<MISC> voters go to the polls on <CAP> .",
    "the <CAP> of <LOC> met <PER> on <CAP> .",
    "<ORG> and <ORG> agreed to merge .",
    "the company said demand was weak .",
    "prices rose sharply in the second quarter .",
    "<PER> , 34 , won the race in <LOC> .",
    "the <MISC> embassy in <LOC> was closed .",
    "<LOC> beat <LOC> 3 - 0 on <CAP> .",
    "a <MISC> court fined <ORG> 5 million dollars .",
    "<PER> replaced <PER> as head of <ORG> .",
    "rain delayed play in <LOC> for two hours .",
    "<CAP> <PER> said <ORG> <LOW> cut jobs .",
    "the <MISC> ministry said <PER> would visit <LOC> .",
    "the <LOW> index closed higher .",
];

fn syllables(rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut s = String::new();
    for _ in 0..n {
        s.push_str(ONSETS.choose(rng).unwrap());
        s.push_str(VOWELS.choose(rng).unwrap());
    }
    s
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone)]
struct Name {
    tokens: Vec<String>,
    /// Carries the type's suffix or stamp word.
    marked: bool,
}

/// One invented name of `etype`.
fn invent(rng: &mut ChaCha8Rng, etype: usize, suffix_rate: f64) -> Name {
    let marked = rng.gen_bool(suffix_rate);
    let n = rng.gen_range(1..=2);
    let stem = capitalize(&syllables(rng, n));
    let tokens = match etype {
        PER => {
            let last = if marked {
                format!("{stem}{}", PER_SUFFIXES.choose(rng).unwrap())
            } else {
                format!("{stem}{}", syllables(rng, 1))
            };
            if rng.gen_bool(0.6) {
                vec![FIRST_NAMES.choose(rng).unwrap().to_string(), last]
            } else {
                vec![last]
            }
        }
        LOC => {
            if marked {
                if rng.gen_bool(0.2) {
                    vec!["Lake".into(), stem]
                } else {
                    vec![format!("{stem}{}", LOC_SUFFIXES.choose(rng).unwrap())]
                }
            } else {
                vec![format!("{stem}{}", syllables(rng, 1))]
            }
        }
        ORG => {
            if marked {
                vec![stem, ORG_STAMPS.choose(rng).unwrap().to_string()]
            } else if rng.gen_bool(0.5) {
                vec![stem.to_uppercase()]
            } else {
                vec![format!("{stem}{}", syllables(rng, 1))]
            }
        }
        _ => {
            if marked {
                vec![format!("{stem}{}", MISC_SUFFIXES.choose(rng).unwrap())]
            } else {
                vec![format!("{stem}{}", syllables(rng, 1))]
            }
        }
    };
    Name { tokens, marked }
}

fn build_pools(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<Vec<Name>> {
    let mut seen: BTreeSet<String> = COMMON_CAPS
        .iter()
        .chain(&COMMON_LOWER)
        .map(|w| w.to_lowercase())
        .collect();
    let mut pools = vec![Vec::new(); TYPES.len()];
    for (etype, pool) in pools.iter_mut().enumerate() {
        let mut attempts = 0;
        while pool.len() < cfg.pool_size {
            attempts += 1;
            let name = invent(rng, etype, cfg.suffix_rate);
            // Invented tokens must be new so no name is a sub-phrase of another.
            let fresh: Vec<String> = name
                .tokens
                .iter()
                .filter(|t| !FIRST_NAMES.contains(&t.as_str()) && !ORG_STAMPS.contains(&t.as_str()) && *t != "Lake")
                .map(|t| t.to_lowercase())
                .collect();
            if fresh.iter().all(|t| !seen.contains(t)) || attempts > cfg.pool_size * 50 {
                seen.extend(fresh);
                pool.push(name);
            }
        }
    }
    pools
}

/// Name pools split at `seen`: indices below it may occur anywhere, the
/// rest only in dev/test.
struct Pools {
    names: Vec<Vec<Name>>,
    seen: usize,
}

impl Pools {
    fn draw<'a>(&'a self, rng: &mut ChaCha8Rng, etype: usize, heldout: f64) -> &'a [String] {
        let pool = &self.names[etype];
        let i = if self.seen < pool.len() && heldout > 0.0 && rng.gen_bool(heldout) {
            rng.gen_range(self.seen..pool.len())
        } else {
            rng.gen_range(0..self.seen.max(1))
        };
        &pool[i].tokens
    }
}

fn fill(
    rng: &mut ChaCha8Rng,
    pools: &Pools,
    heldout: f64,
    schema: &LabelSchema,
) -> Result<(Sentence, Vec<usize>)> {
    let template = TEMPLATES.choose(rng).unwrap();
    let mut words: Vec<String> = Vec::new();
    let mut spans = Vec::new();
    for slot in template.split(' ') {
        let etype = match slot {
            "<PER>" => Some(PER),
            "<LOC>" => Some(LOC),
            "<ORG>" => Some(ORG),
            "<MISC>" => Some(MISC),
            "<CAP>" => {
                words.push(COMMON_CAPS.choose(rng).unwrap().to_string());
                None
            }
            "<LOW>" => {
                words.push(COMMON_LOWER.choose(rng).unwrap().to_string());
                None
            }
            w => {
                words.push(w.to_string());
                None
            }
        };
        if let Some(t) = etype {
            let name = pools.draw(rng, t, heldout);
            let start = words.len();
            words.extend(name.iter().cloned());
            spans.push(EntitySpan::new(start, words.len() - 1, t));
        }
    }
    if let Some(first) = words.first_mut() {
        *first = capitalize(first);
    }
    let labels = labels_from_spans(&spans, words.len(), schema)?;
    Ok((Sentence::new("synth", words)?, labels.0))
}

fn corpus(
    rng: &mut ChaCha8Rng,
    n: usize,
    pools: &Pools,
    heldout: f64,
    schema: &LabelSchema,
) -> Result<Corpus> {
    let mut sentences = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (s, l) = fill(rng, pools, heldout, schema)?;
        sentences.push(s);
        labels.push(crate::corpus::LabelSequence(l));
    }
    Corpus::new(schema.clone(), sentences).with_layer(Layer::Gold, labels)
}

fn other_type(rng: &mut ChaCha8Rng, etype: usize) -> usize {
    (etype + rng.gen_range(1..TYPES.len())) % TYPES.len()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let unit = |x: &f64| (0.0..=1.0).contains(x);
    if cfg.coverage.len() != TYPES.len()
        || cfg.irregular_coverage < 0.0
        || !cfg.coverage.iter().all(unit)
        || ![cfg.suffix_rate, cfg.heldout_rate, cfg.heldout_mention_rate].iter().all(unit)
        || cfg.mistype_rate + cfg.ambiguous_rate > 1.0
        || cfg.pool_size == 0
    {
        return Err(Error::Config(format!("invalid synthetic data settings {cfg:?}")));
    }
    let schema = LabelSchema::new(TYPES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pools = Pools {
        names: build_pools(&mut rng, cfg),
        seen: ((1.0 - cfg.heldout_rate) * cfg.pool_size as f64).round() as usize,
    };
    let train = corpus(&mut rng, cfg.train_sentences, &pools, 0.0, &schema)?;
    let dev = corpus(&mut rng, cfg.dev_sentences, &pools, cfg.heldout_mention_rate, &schema)?;
    let test = corpus(&mut rng, cfg.test_sentences, &pools, cfg.heldout_mention_rate, &schema)?;

    let mut gazetteer = Gazetteer::new("synthetic");
    for (etype, pool) in pools.names.iter().enumerate() {
        for name in pool {
            let p = cfg.coverage[etype] * if name.marked { 1.0 } else { cfg.irregular_coverage };
            if !rng.gen_bool(p.min(1.0)) {
                continue;
            }
            let phrase = name.tokens.join(" ");
            let roll: f64 = rng.gen();
            if roll < cfg.mistype_rate {
                gazetteer.insert(TYPES[other_type(&mut rng, etype)], &phrase);
            } else if roll < cfg.mistype_rate + cfg.ambiguous_rate {
                gazetteer.insert(TYPES[etype], &phrase);
                gazetteer.insert(TYPES[other_type(&mut rng, etype)], &phrase);
            } else {
                gazetteer.insert(TYPES[etype], &phrase);
            }
        }
    }
    let mut noise: Vec<&str> = COMMON_CAPS.iter().chain(&COMMON_LOWER).copied().collect();
    noise.shuffle(&mut rng);
    for word in noise.into_iter().take(cfg.noise_entries) {
        gazetteer.insert(TYPES[rng.gen_range(0..TYPES.len())], word);
    }

    let rules = vec![
        StampRule::new("Corp", ORG, StampPosition::Tail)?,
        StampRule::new("Bank", ORG, StampPosition::Tail)?,
        StampRule::new("Lake", LOC, StampPosition::Head)?,
    ];
    Ok(SynthData {
        schema,
        train,
        dev,
        test,
        gazetteer,
        rules,
    })
}

/// Writes `train.conll`, `dev.conll`, `test.conll`, `gazetteers/<TYPE>.txt`
/// and `rules.tsv` under `dir`.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<()> {
    let gaz_dir = dir.join("gazetteers");
    std::fs::create_dir_all(&gaz_dir).map_err(|e| Error::io(&gaz_dir, e))?;
    let write = |path: &Path, text: &str| std::fs::write(path, text).map_err(|e| Error::io(path, e));
    for (name, c) in [("train", &data.train), ("dev", &data.dev), ("test", &data.test)] {
        write(&dir.join(format!("{name}.conll")), &write_conll(c, Layer::Gold)?)?;
    }
    for t in TYPES {
        let mut text = String::new();
        for phrase in data.gazetteer.phrases_of(t) {
            let _ = writeln!(text, "{}", phrase.join(" "));
        }
        write(&gaz_dir.join(format!("{t}.txt")), &text)?;
    }
    let mut rules = String::from("# stamp\ttype\tposition\n");
    for r in &data.rules {
        let pos = match r.position {
            StampPosition::Head => "head",
            StampPosition::Tail => "tail",
        };
        let _ = writeln!(rules, "{}\t{}\t{pos}", r.stamp, TYPES[r.etype]);
    }
    write(&dir.join("rules.tsv"), &rules)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_sentences: 50,
            dev_sentences: 10,
            test_sentences: 10,
            pool_size: 40,
            ..Default::default()
        }
    }

    #[test]
    fn seeded_and_sized() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.train.len(), 50);
        assert_eq!(a.test.len(), 10);
        assert_eq!(write_conll(&a.train, Layer::Gold).unwrap(), write_conll(&b.train, Layer::Gold).unwrap());
        assert_eq!(a.gazetteer, b.gazetteer);
        let c = generate(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(write_conll(&a.train, Layer::Gold).unwrap(), write_conll(&c.train, Layer::Gold).unwrap());
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(generate(&SynthConfig {
            coverage: vec![1.5; 4],
            ..small()
        })
        .is_err());
    }
}
