//! Hashed sparse indicator features over a token window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Context radius: offsets `-window..=window` around each token.
    pub window: usize,
    /// Hash dimension is `2^hash_bits`.
    pub hash_bits: u32,
    pub hash_seed: u64,
    /// Longest prefix/suffix emitted.
    pub max_affix: usize,
    /// Emit a constant per-token feature.
    pub bias: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window: 2,
            hash_bits: 18,
            hash_seed: 0,
            max_affix: 3,
            bias: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=30).contains(&self.hash_bits) {
            return Err(Error::Config(format!(
                "hash_bits must be in 1..=30, got {}",
                self.hash_bits
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        1usize << self.hash_bits
    }

    /// Stable 64-bit fingerprint stored in checkpoint headers.
    pub fn digest(&self) -> u64 {
        let canonical = format!(
            "window={};hash_bits={};hash_seed={};max_affix={};bias={}",
            self.window, self.hash_bits, self.hash_seed, self.max_affix, self.bias
        );
        let hash = Sha256::digest(canonical.as_bytes());
        u64::from_le_bytes(hash[..8].try_into().expect("8 bytes"))
    }
}

/// Sorted, de-duplicated `(index, value)` pairs for one token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// 64-bit FNV-1a, seeded by hashing the seed bytes first.
struct Fnv(u64);

impl Fnv {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    fn new(seed: u64) -> Self {
        let mut h = Fnv(Self::OFFSET);
        h.write(&seed.to_le_bytes());
        h
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }
}

pub fn word_shape(token: &str) -> String {
    token
        .chars()
        .map(|c| {
            if c.is_uppercase() {
                'X'
            } else if c.is_lowercase() {
                'x'
            } else if c.is_numeric() {
                'd'
            } else {
                c
            }
        })
        .collect()
}

struct Hasher<'a> {
    config: &'a FeatureConfig,
    mask: u64,
    out: Vec<(u32, f64)>,
}

impl Hasher<'_> {
    fn emit(&mut self, family: &str, offset: isize, value: &str) {
        let mut h = Fnv::new(self.config.hash_seed);
        h.write(family.as_bytes());
        h.write(&offset.to_le_bytes());
        h.write(&[0xff]);
        h.write(value.as_bytes());
        // Final avalanche so that low bits depend on every input byte.
        let mut x = h.0;
        x ^= x >> 33;
        x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
        x ^= x >> 33;
        self.out.push(((x & self.mask) as u32, 1.0));
    }
}

/// Features for every token of `sentence`. Families per window offset:
/// folded identity, word shape, and folded prefixes/suffixes of length
/// `1..=max_affix`; offsets outside the sentence emit a `<BOS>`/`<EOS>`
/// marker instead.
pub fn featurize(sentence: &Sentence, config: &FeatureConfig) -> Vec<FeatureVector> {
    let words: Vec<&str> = sentence.words().collect();
    let folded: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let shapes: Vec<String> = words.iter().map(|w| word_shape(w)).collect();
    let w = config.window as isize;

    (0..words.len())
        .map(|i| {
            let mut hs = Hasher {
                config,
                mask: (config.dim() - 1) as u64,
                out: Vec::new(),
            };
            if config.bias {
                hs.emit("bias", 0, "");
            }
            for k in -w..=w {
                let j = i as isize + k;
                if j < 0 {
                    hs.emit("w", k, "<BOS>");
                    continue;
                }
                let Some(tok) = folded.get(j as usize) else {
                    hs.emit("w", k, "<EOS>");
                    continue;
                };
                let j = j as usize;
                hs.emit("w", k, tok);
                hs.emit("shape", k, &shapes[j]);
                let chars: Vec<char> = tok.chars().collect();
                for n in 1..=config.max_affix.min(chars.len()) {
                    let pre: String = chars[..n].iter().collect();
                    let suf: String = chars[chars.len() - n..].iter().collect();
                    hs.emit("pre", k, &pre);
                    hs.emit("suf", k, &suf);
                }
            }
            let mut entries = hs.out;
            entries.sort_by_key(|e| e.0);
            entries.dedup_by_key(|e| e.0);
            FeatureVector { entries }
        })
        .collect()
}

/// Features for every sentence, in corpus order.
pub fn featurize_corpus(corpus: &Corpus, config: &FeatureConfig) -> Vec<Vec<FeatureVector>> {
    corpus
        .sentences()
        .par_iter()
        .map(|s| featurize(s, config))
        .collect()
}
