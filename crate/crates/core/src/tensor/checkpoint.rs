//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SWBT"
//! u32     format version
//! u32     entry count
//! entry*: u32 name length, UTF-8 name,
//!         u8 dtype (0 = f32, 1 = f64),
//!         u32 rank, u64 extent * rank,
//!         payload (numel scalars, little-endian)
//! ```
//!
//! Entries are written in name order, so equal contents give equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SWBT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Checkpoint(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Named tensors plus the dtype each was (or will be) stored with.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: BTreeMap<String, (DType, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(store: &ParamStore) -> Self {
        let mut ckpt = Self::new();
        for (name, t) in store.iter() {
            ckpt.insert(name, t.clone());
        }
        ckpt
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.entries.insert(name.to_string(), (DType::F64, t));
    }

    pub fn insert_f32(&mut self, name: &str, t: Tensor) {
        self.entries.insert(name.to_string(), (DType::F32, t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries whose names start with `prefix`.
    pub fn params_with_prefix(&self, prefix: &str) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, (_, t)) in &self.entries {
            if name.starts_with(prefix) {
                store.insert(name, t.clone());
            }
        }
        store
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.entries.len()).map_err(|_| too_big())?.to_le_bytes());
        for (name, (dtype, t)) in &self.entries {
            let nb = name.as_bytes();
            out.extend_from_slice(&u32::try_from(nb.len()).map_err(|_| too_big())?.to_le_bytes());
            out.extend_from_slice(nb);
            out.push(dtype.code());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match dtype {
                DType::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                DType::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let count = r.u32()?;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = DType::from_code(r.take(1)?[0])?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| too_big())?);
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(numel.checked_mul(dtype.width()).ok_or_else(too_big)?)?;
            let data = match dtype {
                DType::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                DType::F32 => {
                    payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
                }
            };
            let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            if ckpt.entries.insert(name.clone(), (dtype, t)).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry `{name}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last entry".into()));
        }
        Ok(ckpt)
    }
}

fn too_big() -> Error {
    Error::Checkpoint("size field overflow".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes via a temporary sibling file and a rename, so readers never see a
/// partial checkpoint.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
