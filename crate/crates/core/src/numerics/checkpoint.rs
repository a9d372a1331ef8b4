//! Versioned binary checkpoint: magic, version, a JSON header carrying the
//! caller's metadata plus tensor names and shapes, then raw little-endian
//! values (parameter, first moment, second moment) per tensor.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DType, NumericsError, ParamStore, Scalar, Tensor};

const MAGIC: &[u8; 8] = b"FOACKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: DType,
    step: u64,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(msg: impl Into<String>) -> NumericsError {
    NumericsError::Checkpoint(msg.into())
}

pub fn encode_checkpoint<T: Scalar>(store: &ParamStore<T>, meta: &serde_json::Value) -> Vec<u8> {
    let header = Header {
        dtype: T::DTYPE,
        step: store.step(),
        meta: meta.clone(),
        tensors: store
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 3 * store.count() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (name, t) in store.iter() {
        let st = store.moments(name).expect("moments track params");
        for v in t.data().iter().chain(st.m.data()).chain(st.v.data()) {
            v.write_le(&mut out);
        }
    }
    out
}

/// Decodes a checkpoint, returning the store and the caller metadata.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(ParamStore<T>, serde_json::Value), NumericsError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(corrupt(format!("stored as {:?}, requested {:?}", header.dtype, T::DTYPE)));
    }
    let size = T::DTYPE.size();
    let mut pos = 16 + hlen;
    let mut read = |n: usize| -> Result<Vec<T>, NumericsError> {
        let end = pos + n * size;
        let raw = bytes.get(pos..end).ok_or_else(|| corrupt("truncated tensor data"))?;
        pos = end;
        Ok(raw.chunks_exact(size).map(T::read_le).collect())
    };
    let mut store = ParamStore::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let value = Tensor::new(&entry.shape, read(n)?)?;
        let m = Tensor::new(&entry.shape, read(n)?)?;
        let v = Tensor::new(&entry.shape, read(n)?)?;
        store.insert(entry.name.clone(), value);
        store.set_state(&entry.name, m, v)?;
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    store.set_step(header.step);
    Ok((store, header.meta))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    meta: &serde_json::Value,
) -> Result<(), NumericsError> {
    write_atomic(path, &encode_checkpoint(store, meta))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ParamStore<T>, serde_json::Value), NumericsError> {
    decode_checkpoint(&fs::read(path)?)
}
