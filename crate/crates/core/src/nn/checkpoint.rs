//! `IDCM` checkpoint layout (little-endian):
//!
//! ```text
//! "IDCM" | version u32 = 1 | tensor_count u32 |
//!   tensor_count x ( name_len u16 | name | rows u32 | cols u32 | rows*cols f32 )
//! ```

use std::fs;
use std::path::Path;

use super::{DenseMatrix, NnError, ParamStore};

const MAGIC: &[u8; 4] = b"IDCM";
const VERSION: u32 = 1;

pub fn checkpoint_to_bytes(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for x in t.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ParamStore, NnError> {
    let bad = |m: &str| NnError::BadCheckpoint(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], NnError> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_of(take(4)?);
    if version != VERSION {
        return Err(NnError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let count = u32_of(take(4)?) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(len)?)
            .map_err(|_| bad("non-UTF-8 tensor name"))?
            .to_string();
        let rows = u32_of(take(4)?) as usize;
        let cols = u32_of(take(4)?) as usize;
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(|| bad("tensor too large"))?;
        let data = take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, DenseMatrix::from_vec(rows, cols, data)?)?;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(store)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), NnError> {
    fs::write(path, checkpoint_to_bytes(params)).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, NnError> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}
