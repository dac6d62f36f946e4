//! Image feature files ("IMFT").
//!
//! Little-endian layout:
//!
//! ```text
//! "IMFT" | u32 version (=1) | u32 record_count | u32 feature_dim
//! repeated record_count times:
//!     u16 id_length | id bytes (UTF-8) | feature_dim × f32
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::Vector;

pub const FEATURE_MAGIC: &[u8; 4] = b"IMFT";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 16;

/// Image id → feature vector, kept in insertion order and stored as the
/// on-disk `f32` values so that save/load is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    feature_dim: usize,
    records: IndexMap<String, Vec<f32>>,
}

impl FeatureStore {
    pub fn new(feature_dim: usize) -> Self {
        FeatureStore {
            feature_dim,
            records: IndexMap::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, feature: Vec<f32>) -> Result<()> {
        let id = id.into();
        if feature.len() != self.feature_dim {
            return Err(Error::shape(
                "FeatureStore::insert",
                format!(
                    "feature for {id:?} has dim {} but store dim is {}",
                    feature.len(),
                    self.feature_dim
                ),
            ));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::Integrity(format!(
                "image id of {} bytes is too long",
                id.len()
            )));
        }
        if self.records.contains_key(&id) {
            return Err(Error::Integrity(format!("duplicate image id {id:?}")));
        }
        self.records.insert(id, feature);
        Ok(())
    }

    pub fn get_raw(&self, id: &str) -> Option<&[f32]> {
        self.records.get(id).map(Vec::as_slice)
    }

    pub fn get(&self, id: &str) -> Option<Vector> {
        self.get_raw(id)
            .map(|f| f.iter().map(|&v| v as f64).collect::<Vec<_>>().into())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .records
            .keys()
            .map(|k| 2 + k.len() + 4 * self.feature_dim)
            .sum();
        let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + payload);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        for (id, feat) in &self.records {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in feat {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != FEATURE_MAGIC {
            return Err(Error::format(
                0,
                format!("bad magic {magic:?}, expected \"IMFT\""),
            ));
        }
        let version = r.u32("version")?;
        if version != FEATURE_VERSION {
            return Err(Error::format(
                4,
                format!("unsupported version {version}, expected {FEATURE_VERSION}"),
            ));
        }
        let count = r.u32("record count")? as usize;
        let dim = r.u32("feature dim")? as usize;
        let mut store = FeatureStore::new(dim);
        for i in 0..count {
            let at = r.pos;
            let id_len = r.u16("id length")? as usize;
            let id = std::str::from_utf8(r.take(id_len, "image id")?)
                .map_err(|_| Error::format(at as u64 + 2, format!("record {i}: id is not UTF-8")))?
                .to_string();
            let raw = r.take(4 * dim, "feature values")?;
            let feat = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if store.contains(&id) {
                return Err(Error::Integrity(format!(
                    "duplicate image id {id:?} in record {i} (byte {at})"
                )));
            }
            store.insert(id, feat)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                r.pos as u64,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    pub(crate) fn is_at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
