//! `FBCK` parameter files with a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;

const MAGIC: &[u8; 4] = b"FBCK";
const VERSION: u32 = 1;

/// `model.ckpt` -> `model.ckpt.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn encode(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * store.n_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
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

pub(crate) fn decode(buf: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u64()?;
    let mut store = ParamStore::new(0);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c <= buf.len() / 4)
            .ok_or_else(|| Error::Checkpoint(format!("implausible shape {shape:?} for {name}")))?;
        let data = r
            .take(4 * count)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(store)
}

/// Writes parameters to `path` and `meta` to its sidecar.
pub fn save_checkpoint<M: Serialize>(path: &Path, store: &ParamStore<f32>, meta: &M) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Checkpoint(format!("cannot serialize metadata: {e}")))?;
    write_atomic(path, &encode(store))?;
    write_atomic(&sidecar_path(path), format!("{json}\n").as_bytes())
}

/// Reads a checkpoint and its sidecar.
pub fn load_checkpoint<M: DeserializeOwned>(path: &Path) -> Result<(ParamStore<f32>, M)> {
    let store = decode(&fs::read(path)?)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", side.display())))?;
    let meta = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("bad metadata in {}: {e}", side.display())))?;
    Ok((store, meta))
}
