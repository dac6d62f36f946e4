//! Binary model checkpoints.
//!
//! Layout, little-endian: magic `NDCP`, u32 version, then a metadata block
//! (u32 vocab_size, embed_dim, feature_dim, hidden_dim; f64 d_t; u64
//! vocabulary hash; u8 frozen-embeddings flag), a u32 tensor count, and per
//! tensor a u16 name length, the name, u32 rank, u32 dims and f64 values.

use std::path::Path;

use crate::corpus::features::ByteReader;
use crate::corpus::Vocabulary;
use crate::decoder::{CaptionModel, ModelDims};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NDCP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CaptionModel,
    pub d_t: f64,
    pub vocab_hash: u64,
}

pub fn checkpoint_to_bytes(model: &CaptionModel, d_t: f64, vocab_hash: u64) -> Vec<u8> {
    let d = model.dims;
    let mut out = Vec::with_capacity(64 + 8 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [d.vocab_size, d.embed_dim, d.feature_dim, d.hidden_dim] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&d_t.to_le_bytes());
    out.extend_from_slice(&vocab_hash.to_le_bytes());
    out.push(model.embeddings_frozen as u8);
    let tensors = model.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for s in shape {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint without checking it against a vocabulary.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "expected \"NDCP\""));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = r.u32("dimension")? as usize;
    }
    let dims = ModelDims {
        vocab_size: dims[0],
        embed_dim: dims[1],
        feature_dim: dims[2],
        hidden_dim: dims[3],
    };
    let d_t = r.f64("d_t")?;
    let vocab_hash = r.u64("vocabulary hash")?;
    let flag_at = r.pos as u64;
    let frozen = match r.take(1, "flags")?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::format(flag_at, format!("bad frozen flag {other}"))),
    };

    let mut model = CaptionModel::zeros(dims);
    model.embeddings_frozen = frozen;
    let expected: Vec<(&'static str, Vec<usize>)> = model
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    let count_at = r.pos as u64;
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(Error::format(
            count_at,
            format!("{count} tensors, expected {}", expected.len()),
        ));
    }
    let mut values = Vec::with_capacity(model.param_count());
    for (want_name, want_shape) in &expected {
        let at = r.pos as u64;
        let name_len = r.u16("tensor name length")? as usize;
        let name = r.take(name_len, "tensor name")?;
        if name != want_name.as_bytes() {
            return Err(Error::format(
                at,
                format!(
                    "tensor {:?}, expected {want_name}",
                    String::from_utf8_lossy(name)
                ),
            ));
        }
        let at = r.pos as u64;
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("tensor dim")? as usize);
        }
        if &shape != want_shape {
            return Err(Error::format(
                at,
                format!("{want_name} has shape {shape:?}, expected {want_shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        for _ in 0..n {
            values.push(r.f64(want_name)?);
        }
    }
    if !r.is_at_end() {
        return Err(Error::format(
            r.pos as u64,
            "trailing bytes after last tensor",
        ));
    }
    model.unflatten(&values)?;
    Ok(Checkpoint {
        model,
        d_t,
        vocab_hash,
    })
}

pub fn save_checkpoint(
    path: &Path,
    model: &CaptionModel,
    d_t: f64,
    vocab: &Vocabulary,
) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(model, d_t, vocab.content_hash()))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Loads a checkpoint and verifies it was trained with `vocab`.
pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let ckpt = checkpoint_from_bytes(&bytes)?;
    let hash = vocab.content_hash();
    if ckpt.vocab_hash != hash {
        return Err(Error::Incompatible(format!(
            "checkpoint vocabulary hash {:016x} does not match {:016x}",
            ckpt.vocab_hash, hash
        )));
    }
    if ckpt.model.dims.vocab_size != vocab.len() {
        return Err(Error::Incompatible(format!(
            "checkpoint has {} vocabulary entries, vocabulary has {}",
            ckpt.model.dims.vocab_size,
            vocab.len()
        )));
    }
    Ok(ckpt)
}
