//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic           8 bytes   "NGCKPT01"
//! config_len      u32
//! config          config_len bytes, ModelConfig as JSON
//! vocab_hash      32 bytes, SHA-256 of the vocabulary
//! n_tensors       u32
//! n_tensors times:
//!   name_len      u32
//!   name          name_len bytes, UTF-8
//!   rows          u32
//!   cols          u32
//!   values        rows * cols f64, row-major
//! ```
//!
//! Tensors appear in [`Params::tensors`] order. Loading checks names and
//! shapes against a freshly built parameter set for the stored config.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::{init_model, ModelConfig, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NGCKPT01";

pub fn to_bytes(params: &Params, vocab_hash: &[u8; 32]) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&params.config)?;
    let tensors = params.tensors();
    let mut out = Vec::with_capacity(64 + params.num_parameters() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(vocab_hash);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated file".into()))?;
    Ok(buf)
}

/// Parses a checkpoint, returning the parameters and the vocabulary hash.
pub fn from_bytes(bytes: &[u8]) -> Result<(Params, [u8; 32])> {
    let mut r = Cursor::new(bytes);
    if read_exact(&mut r, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let config_len = read_u32(&mut r)? as usize;
    let config: ModelConfig = serde_json::from_slice(&read_exact(&mut r, config_len)?)?;
    let mut vocab_hash = [0u8; 32];
    vocab_hash.copy_from_slice(&read_exact(&mut r, 32)?);

    let mut params = init_model(&config, 0)?;
    let n_tensors = read_u32(&mut r)? as usize;
    let mut tensors = params.tensors_mut();
    if n_tensors != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {n_tensors}",
            tensors.len()
        )));
    }
    for (name, t) in tensors.iter_mut() {
        let name_len = read_u32(&mut r)? as usize;
        let stored = String::from_utf8(read_exact(&mut r, name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if stored != *name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {stored}")));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if [rows, cols] != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: stored shape {rows}x{cols}, expected {:?}",
                t.shape()
            )));
        }
        let raw = read_exact(&mut r, rows * cols * 8)?;
        for (v, chunk) in t.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    drop(tensors);
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((params, vocab_hash))
}

pub fn save(path: impl AsRef<Path>, params: &Params, vocab_hash: &[u8; 32]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params, vocab_hash)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Params, [u8; 32])> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
