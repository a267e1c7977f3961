//! NLT tensor container, version 1.
//!
//! Layout: the 4 bytes `NLT1`, a little-endian `u32` header length, a UTF-8
//! JSON header `{"dtype":"f32","shape":[..],"order":"row-major"}`, then the
//! raw little-endian `f32` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NLT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
}

/// In-memory form of one container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(Tensor { shape, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let want: usize = shape.iter().product();
    if want != len {
        return Err(Error::format(format!(
            "shape {shape:?} holds {want} values but payload has {len}"
        )));
    }
    Ok(())
}

pub fn encode(shape: &[usize], payload: &[f32]) -> Result<Vec<u8>> {
    check_len(shape, payload.len())?;
    let header = serde_json::to_vec(&Header {
        dtype: "f32".into(),
        shape: shape.to_vec(),
        order: "row-major".into(),
    })?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::format("tensor header longer than u32::MAX"))?;
    let mut out = Vec::with_capacity(8 + header.len() + 4 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 8 {
        return Err(Error::format("file shorter than the fixed preamble"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[..4],
            MAGIC
        )));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < header_len {
        return Err(Error::format("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| Error::format(format!("unreadable header: {e}")))?;
    if header.dtype != "f32" {
        return Err(Error::format(format!("unsupported dtype {}", header.dtype)));
    }
    if header.order != "row-major" {
        return Err(Error::format(format!("unsupported order {}", header.order)));
    }
    let payload = &body[header_len..];
    let numel: usize = header.shape.iter().product();
    if payload.len() != 4 * numel {
        return Err(Error::format(format!(
            "payload has {} bytes, shape {:?} needs {}",
            payload.len(),
            header.shape,
            4 * numel
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor {
        shape: header.shape,
        data,
    })
}

pub fn write_tensor(path: impl AsRef<Path>, shape: &[usize], payload: &[f32]) -> Result<()> {
    let bytes = encode(shape, payload)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::format(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}

/// Narrow `f64` values to the persisted precision.
pub fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}
