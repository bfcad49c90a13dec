//! Binary checkpoint: `BONDMDL1`, then little-endian `u64` dimension, class
//! count, seed and feature-config digest, then `dim × classes` `f64` weights
//! row-major.

use std::path::Path;

use super::model::{ModelParams, TokenClassifier};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BONDMDL1";
const HEADER_LEN: usize = 8 + 4 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub dim: u64,
    pub classes: u64,
    pub seed: u64,
    pub feature_digest: u64,
}

pub fn encode_checkpoint(params: &ModelParams, feature_digest: u64) -> Vec<u8> {
    let w = params.weights();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * w.len());
    out.extend_from_slice(MAGIC);
    for v in [
        params.dim() as u64,
        params.classes() as u64,
        params.seed(),
        feature_digest,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for x in w {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ModelParams)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing BONDMDL1 header".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
    let header = CheckpointHeader {
        dim: word(0),
        classes: word(1),
        seed: word(2),
        feature_digest: word(3),
    };
    let n = header
        .dim
        .checked_mul(header.classes)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::Checkpoint("implausible dimensions".into()))?;
    let body = &bytes[HEADER_LEN..];
    if Some(body.len()) != n.checked_mul(8) {
        return Err(Error::Checkpoint(format!(
            "expected {n} weights, found {} bytes",
            body.len()
        )));
    }
    let weights = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let params = ModelParams::from_weights(
        header.dim as usize,
        header.classes as usize,
        header.seed,
        weights,
    )
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((header, params))
}

pub fn write_checkpoint(path: &Path, params: &ModelParams, feature_digest: u64) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, feature_digest)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
