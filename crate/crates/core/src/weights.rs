//! Binary parameter file.
//!
//! Layout, all integers u32 little-endian:
//!
//! ```text
//! "TKFW" | version | record count
//! per record: name length | name (UTF-8) | rank (= 4) | 4 dims | f32 LE payload
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"TKFW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights format version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("weights file truncated at byte {0}")]
    Truncated(usize),
    #[error("record `{name}` has rank {rank}, expected 4")]
    BadRank { name: String, rank: u32 },
    #[error("record name at byte {0} is not valid UTF-8")]
    BadName(usize),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("parameter `{0}` missing from weights file")]
    Missing(String),
    #[error("weights file has unknown parameter `{0}`")]
    Unknown(String),
    #[error("parameter `{name}` has shape {found} in file, model expects {expected}")]
    Shape {
        name: String,
        expected: Shape,
        found: Shape,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn encode(records: &[(&str, &Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&4u32.to_le_bytes());
        for d in t.shape().dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(WeightsError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, WeightsError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| WeightsError::BadMagic)? != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| WeightsError::BadName(at))?
            .to_owned();
        let rank = r.u32()?;
        if rank != 4 {
            return Err(WeightsError::BadRank { name, rank });
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let shape = Shape::from(dims);
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(WeightsError::Truncated(bytes.len()))?;
        let payload = r.take(numel.checked_mul(4).ok_or(WeightsError::Truncated(bytes.len()))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push((name, Tensor::new(shape, data).expect("sized above")));
    }
    if r.pos != bytes.len() {
        return Err(WeightsError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(records)
}

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let records: Vec<(&str, &Tensor<f32>)> = store.iter().map(|p| (p.name.as_str(), &p.value)).collect();
    encode(&records)
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<(), WeightsError> {
    fs::write(path, encode_params(store)).map_err(|source| WeightsError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, WeightsError> {
    let bytes = fs::read(path).map_err(|source| WeightsError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode(&bytes)
}

/// Copies decoded records into `store`. Every parameter must be present
/// with a matching shape and no extra records are allowed.
pub fn apply_records(store: &mut ParamStore, records: Vec<(String, Tensor<f32>)>) -> Result<(), WeightsError> {
    let mut seen = vec![false; store.len()];
    let mut staged = Vec::with_capacity(records.len());
    for (name, t) in records {
        let id = store.id(&name).ok_or_else(|| WeightsError::Unknown(name.clone()))?;
        let expected = store.get(id).value.shape();
        if t.shape() != expected {
            return Err(WeightsError::Shape {
                name,
                expected,
                found: t.shape(),
            });
        }
        seen[id.index()] = true;
        staged.push((id, t));
    }
    if let Some(p) = store.iter().zip(&seen).find(|(_, &s)| !s) {
        return Err(WeightsError::Missing(p.0.name.clone()));
    }
    for (id, t) in staged {
        store.get_mut(id).value = t;
    }
    Ok(())
}

pub fn load_params(store: &mut ParamStore, path: &Path) -> Result<(), WeightsError> {
    apply_records(store, read_file(path)?)
}
