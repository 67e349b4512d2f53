//! Raw tensor files.
//!
//! Layout (little-endian):
//! - magic: `PLANTNSR` (8 bytes)
//! - dtype: u8 (1 = f32, 2 = f64)
//! - rank: u8 (1..=4)
//! - dims: rank * u64
//! - payload: row-major values

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PLANTNSR";
const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }
}

/// A named dense tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

impl TensorFile {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::PayloadMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            shape,
            data,
        })
    }

    pub fn from_array(name: impl Into<String>, array: &ArrayD<f64>, dtype: DType) -> Result<Self> {
        let shape = array.shape().to_vec();
        let values = array.iter().copied();
        let data = match dtype {
            DType::F64 => TensorData::F64(values.collect()),
            DType::F32 => TensorData::F32(values.map(|v| v as f32).collect()),
        };
        Self::new(name, shape, data)
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    /// Converts to a 64-bit array; f32 storage is widened exactly.
    pub fn to_array(&self) -> ArrayD<f64> {
        let values: Vec<f64> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        };
        ArrayD::from_shape_vec(IxDyn(&self.shape), values).expect("shape validated on construction")
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        validate_shape(&self.shape)?;
        let dtype = self.dtype();
        let mut out = Vec::with_capacity(10 + 8 * self.shape.len() + self.data.len() * dtype.size());
        out.extend_from_slice(MAGIC);
        out.push(dtype.code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => {
                for (i, x) in v.iter().enumerate() {
                    if !x.is_finite() {
                        return Err(Error::NonFinite(i));
                    }
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::F64(v) => {
                for (i, x) in v.iter().enumerate() {
                    if !x.is_finite() {
                        return Err(Error::NonFinite(i));
                    }
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn decode(name: impl Into<String>, bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = |expected: u64| Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic(path.to_path_buf()));
        }
        if bytes.len() < 10 {
            return Err(truncated(10));
        }
        let dtype = DType::from_code(bytes[8])?;
        let rank = bytes[9] as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::InvalidShape(vec![0; rank]));
        }
        let header_len = 10 + 8 * rank;
        if bytes.len() < header_len {
            return Err(truncated(header_len as u64));
        }
        let raw_dims: Vec<u64> = bytes[10..header_len]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let numel = raw_dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size() as u64))
            .filter(|&n| usize::try_from(n).is_ok() && n <= usize::MAX as u64 / 2)
            .ok_or_else(|| Error::ShapeOverflow(raw_dims.clone()))?;
        let shape: Vec<usize> = raw_dims.iter().map(|&d| d as usize).collect();
        validate_shape(&shape)?;
        let expected_len = header_len as u64 + numel;
        if (bytes.len() as u64) < expected_len {
            return Err(truncated(expected_len));
        }
        if bytes.len() as u64 != expected_len {
            return Err(Error::PayloadMismatch {
                expected: expected_len as usize,
                found: bytes.len(),
            });
        }
        let payload = &bytes[header_len..];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            ),
        };
        Self::new(name, shape, data)
    }
}

/// Writes `tensor` to `path`; the tensor's name is not stored in the file.
pub fn write_tensor(tensor: &TensorFile, path: &Path) -> Result<()> {
    let bytes = tensor.encode()?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_array(array: &ArrayD<f64>, dtype: DType, path: &Path) -> Result<()> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_tensor(&TensorFile::from_array(name, array, dtype)?, path)
}

/// Reads a tensor file; the name is taken from the file stem.
pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    TensorFile::decode(name, &bytes, path)
}

pub fn read_array(path: &Path) -> Result<ArrayD<f64>> {
    Ok(read_tensor(path)?.to_array())
}

/// Reads only the dtype and shape from a tensor file header.
pub fn read_header(path: &Path) -> Result<(DType, Vec<usize>)> {
    let t = read_tensor(path)?;
    Ok((t.dtype(), t.shape))
}
