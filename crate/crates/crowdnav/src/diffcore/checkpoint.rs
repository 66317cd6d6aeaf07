//! Parameter checkpoint byte format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CNAVCKPT"
//! version u32      1
//! count   u32      number of entries
//! entry*  u32 name_len | name (utf-8) | u32 ndim | u64*ndim dims | f64*n values
//! ```
//!
//! Values are always written as little-endian 64-bit floats, so a round trip
//! of an `f64` store is bit-exact.

use crate::diffcore::store::ParameterStore;
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"CNAVCKPT";
pub const VERSION: u32 = 1;

/// Guard against corrupt headers asking for absurd allocations.
const MAX_NAME_LEN: u32 = 1 << 16;
const MAX_DIMS: u32 = 8;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic: not a parameter checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint while reading {0}")]
    Truncated(&'static str),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn serialize_params<T: Real>(params: &ParameterStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.value_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, param) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(param.shape().len() as u32).to_le_bytes());
        for &d in param.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in param.values() {
            let f = v.to_f64().unwrap_or(f64::NAN);
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(what));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn deserialize_params<T: Real>(bytes: &[u8]) -> Result<ParameterStore<T>, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.u32("entry count")?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name_len = r.u32("name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(CheckpointError::Corrupt(format!(
                "entry name length {name_len} exceeds limit"
            )));
        }
        let name_bytes = r.take(name_len as usize, "entry name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Corrupt("entry name is not utf-8".to_string()))?
            .to_string();
        let ndim = r.u32("shape rank")?;
        if ndim > MAX_DIMS {
            return Err(CheckpointError::Corrupt(format!(
                "entry {name}: rank {ndim} exceeds limit"
            )));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut total: usize = 1;
        for _ in 0..ndim {
            let d = r.u64("shape dim")? as usize;
            total = total.checked_mul(d).ok_or_else(|| {
                CheckpointError::Corrupt(format!("entry {name}: shape overflows"))
            })?;
            shape.push(d);
        }
        if total > (bytes.len() - r.pos) / 8 {
            return Err(CheckpointError::Truncated("entry values"));
        }
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            let f = r.f64("entry values")?;
            values.push(T::from_f64(f).ok_or_else(|| {
                CheckpointError::Corrupt(format!("entry {name}: value not representable"))
            })?);
        }
        store
            .insert(name.clone(), shape, values)
            .map_err(|e| CheckpointError::Corrupt(format!("entry {name}: {e}")))?;
    }
    Ok(store)
}
