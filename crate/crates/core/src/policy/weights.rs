//! Binary weight file: named float32 tensors with a CRC-32C trailer.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SVOW"                      4 bytes
//! format_version              u32
//! tensor_count                u32
//! per tensor:                 name_len u32, name (UTF-8), dtype u8 (0 = f32),
//!                             ndim u32, dims u32 * ndim
//! payloads                    row-major f32 data of every tensor, manifest order
//! crc32c                      u32 over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SVOW";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u32),
    #[error("weight file truncated")]
    Truncated,
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("inconsistent shape at {0}")]
    ShapeInconsistency(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data does not match shape");
        Self { shape, data }
    }

    pub fn scalar(v: f32) -> Self {
        Self::new(vec![1], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    /// Bitwise equality (distinguishes -0.0 and NaN payloads).
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub type TensorMap = BTreeMap<String, Tensor>;

/// Serialize tensors in name order.
pub fn encode_tensors(tensors: &TensorMap) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in tensors.values() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32c::crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightError> {
        let end = self.pos.checked_add(n).ok_or(WeightError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(WeightError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, WeightError> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<TensorMap, WeightError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(WeightError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(WeightError::Truncated);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32c::crc32c(body);
    if stored != computed {
        return Err(WeightError::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != WEIGHT_FORMAT_VERSION {
        return Err(WeightError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| WeightError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(WeightError::Malformed(format!("tensor {name}: unsupported dtype {dtype}")));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        manifest.push((name, shape));
    }
    let mut tensors = TensorMap::new();
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or(WeightError::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
            return Err(WeightError::Malformed(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(WeightError::Malformed(format!(
            "{} trailing bytes after payloads",
            body.len() - r.pos
        )));
    }
    Ok(tensors)
}

pub fn read_tensor_file(path: &Path) -> Result<TensorMap, WeightError> {
    let bytes = std::fs::read(path).map_err(|source| WeightError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_tensors(&bytes)
}

pub fn write_tensor_file(path: &Path, tensors: &TensorMap) -> Result<(), WeightError> {
    std::fs::write(path, encode_tensors(tensors)).map_err(|source| WeightError::Io {
        path: path.display().to_string(),
        source,
    })
}
