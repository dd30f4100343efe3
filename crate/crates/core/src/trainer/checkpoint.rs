//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RNKN" | u32 version
//! u64 len | vocabulary JSON
//! u64 len | knowledge JSON
//! u64 len | train config JSON
//! u64 len | stats history JSON
//! u64 V | u64 d | u64 C | u8 has_bias
//! f64[V*d] embeddings | f64[d*2d] composition | f64[d] bias (if any) | f64[C*d] classifier
//! SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{EpochStats, TrainConfig};
use crate::corpus::{KnowledgeBase, Vocabulary};
use crate::error::{Error, Result};
use crate::network::{Matrix, ModelParams};

pub const MAGIC: &[u8; 4] = b"RNKN";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Everything needed to diagnose new records.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocabulary: Vocabulary,
    pub knowledge: KnowledgeBase,
    pub params: ModelParams,
    pub config: TrainConfig,
    pub history: Vec<EpochStats>,
}

fn put_json(buf: &mut Vec<u8>, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec(value)?;
    buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&bytes);
    Ok(())
}

fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_json(&mut buf, &ckpt.vocabulary)?;
    put_json(&mut buf, &ckpt.knowledge)?;
    put_json(&mut buf, &ckpt.config)?;
    put_json(&mut buf, &ckpt.history)?;
    let p = &ckpt.params;
    for n in [p.num_entities(), p.dim(), p.num_classes()] {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    buf.push(u8::from(p.bias.is_some()));
    put_f64s(&mut buf, p.embeddings.as_slice());
    put_f64s(&mut buf, p.composition.as_slice());
    if let Some(b) = &p.bias {
        put_f64s(&mut buf, b);
    }
    put_f64s(&mut buf, p.classifier.as_slice());
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(ckpt)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptCheckpoint("length overflow".into()))
    }

    fn json<T: DeserializeOwned>(&mut self, what: &str) -> Result<T> {
        let n = self.len()?;
        serde_json::from_slice(self.take(n)?)
            .map_err(|e| Error::CorruptCheckpoint(format!("{what}: {e}")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes_len = n
            .checked_mul(8)
            .ok_or_else(|| Error::CorruptCheckpoint("block size overflow".into()))?;
        Ok(self
            .take(bytes_len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::CorruptCheckpoint("block size overflow".into()))?;
        Ok(Matrix::from_vec(rows, cols, self.f64s(n)?).expect("sized block"))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptCheckpoint("missing RNKN header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 8 + DIGEST_LEN {
        return Err(Error::CorruptCheckpoint("file truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }

    let mut cur = Cursor { bytes: body, pos: 8 };
    let vocabulary: Vocabulary = cur.json("vocabulary")?;
    let knowledge: KnowledgeBase = cur.json("knowledge")?;
    let config: TrainConfig = cur.json("config")?;
    let history: Vec<EpochStats> = cur.json("history")?;
    let (v, d, c) = (cur.len()?, cur.len()?, cur.len()?);
    let has_bias = match cur.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::CorruptCheckpoint(format!("bad bias flag {other}"))),
    };
    let embeddings = cur.matrix(v, d)?;
    let composition = cur.matrix(d, d.saturating_mul(2))?;
    let bias = if has_bias { Some(cur.f64s(d)?) } else { None };
    let classifier = cur.matrix(c, d)?;
    if cur.pos != body.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            body.len() - cur.pos
        )));
    }
    if v != vocabulary.len() || c != vocabulary.num_classes() {
        return Err(Error::CorruptCheckpoint(format!(
            "parameter shape V={v} C={c} disagrees with vocabulary V={} C={}",
            vocabulary.len(),
            vocabulary.num_classes()
        )));
    }
    Ok(Checkpoint {
        vocabulary,
        knowledge,
        params: ModelParams {
            embeddings,
            composition,
            bias,
            classifier,
        },
        config,
        history,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&fs::read(path)?)
}
