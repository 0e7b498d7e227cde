//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "ARNMTCKP"
//! version    u32
//! metadata   epoch u64, updates u64, val_loss f64,
//!            vocab_hash (u32 length + UTF-8), config_digest (u32 length + UTF-8)
//! dims       src_vocab, tgt_vocab, embed_dim, hidden_dim, attention_dim as u64
//! table      u32 count, then per tensor: u16 name length, name, rows u64, cols u64
//! blobs      f64 values of every tensor in table order
//! checksum   SHA-256 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::subword::Vocabulary;

const MAGIC: &[u8; 8] = b"ARNMTCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub updates: u64,
    pub val_loss: f64,
    pub vocab_hash: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.meta.updates.to_le_bytes());
        out.extend_from_slice(&self.meta.val_loss.to_le_bytes());
        for s in [&self.meta.vocab_hash, &self.meta.config_digest] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        let d = self.params.dims;
        for v in [d.src_vocab, d.tgt_vocab, d.embed_dim, d.hidden_dim, d.attention_dim] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        }
        for (_, t) in &tensors {
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Decodes a container, checking the checksum and the shape table.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < MAGIC.len() + 32 {
            return Err(corrupt("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if &body[..MAGIC.len()] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified)"));
        }
        let mut r = Reader {
            bytes: body,
            pos: MAGIC.len(),
        };
        let version = r.u32().ok_or_else(|| corrupt("truncated header"))?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let mut read_meta = || -> Option<CheckpointMeta> {
            Some(CheckpointMeta {
                epoch: r.u64()? as usize,
                updates: r.u64()?,
                val_loss: f64::from_bits(r.u64()?),
                vocab_hash: r.string_u32()?,
                config_digest: r.string_u32()?,
            })
        };
        let meta = read_meta().ok_or_else(|| corrupt("truncated metadata"))?;
        let mut dims_raw = [0usize; 5];
        for d in &mut dims_raw {
            *d = r.u64().ok_or_else(|| corrupt("truncated dimensions"))? as usize;
        }
        let dims = ModelDims {
            src_vocab: dims_raw[0],
            tgt_vocab: dims_raw[1],
            embed_dim: dims_raw[2],
            hidden_dim: dims_raw[3],
            attention_dim: dims_raw[4],
        };
        let count = r.u32().ok_or_else(|| corrupt("truncated shape table"))? as usize;
        let expected = ModelParams::shape_table(dims);
        if count != expected.len() {
            return Err(Error::Shape(format!(
                "checkpoint lists {count} tensors, model needs {}",
                expected.len()
            )));
        }
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let entry = (|| Some((r.string_u16()?, r.u64()? as usize, r.u64()? as usize)))()
                .ok_or_else(|| corrupt("truncated shape table"))?;
            table.push(entry);
        }
        if table != expected {
            let (name, rows, cols) = table
                .iter()
                .zip(&expected)
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.clone())
                .unwrap_or_default();
            return Err(Error::Shape(format!(
                "tensor {name} ({rows}x{cols}) does not fit the declared dimensions"
            )));
        }
        let mut params = ModelParams::zeros(dims);
        for t in params.tensors_mut() {
            for v in t.as_mut_slice() {
                *v = f64::from_bits(r.u64().ok_or_else(|| corrupt("truncated parameter data"))?);
            }
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after parameter data"));
        }
        params.validate()?;
        Ok(Checkpoint { params, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads and validates a checkpoint. With `vocab`, also requires the
    /// stored vocabulary hash to match.
    pub fn load(path: &Path, vocab: Option<&Vocabulary>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Self::from_bytes(&bytes, path)?;
        if let Some(v) = vocab {
            ckpt.check_vocab(v)?;
        }
        Ok(ckpt)
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let hash = vocab.content_hash();
        if hash != self.meta.vocab_hash {
            return Err(Error::Compatibility(format!(
                "checkpoint was trained with vocabulary {}, got {}",
                short(&self.meta.vocab_hash),
                short(&hash)
            )));
        }
        if vocab.len() != self.params.dims.tgt_vocab || vocab.len() != self.params.dims.src_vocab {
            return Err(Error::Compatibility(format!(
                "vocabulary of {} tokens does not fit model dimensions",
                vocab.len()
            )));
        }
        Ok(())
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path, vocab: Option<&Vocabulary>) -> Result<Checkpoint> {
    Checkpoint::load(path, vocab)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_le_bytes(self.take(2)?.try_into().ok()?))
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn string_u32(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }

    fn string_u16(&mut self) -> Option<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }
}
