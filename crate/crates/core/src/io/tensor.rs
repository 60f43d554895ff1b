//! The `.rft` binary tensor container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "RATK" | version: u16 | dtype: u8 | ndim: u8 | dims: u64 * ndim | payload: f32 * prod(dims)
//! ```
//!
//! Only `dtype = 0` (f32) and `version = 1` exist. Readers reject trailing
//! bytes, short payloads and non-finite values.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RATK";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MAX_DIMS: usize = 4;
const HEADER_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic bytes {0:?}, expected \"RATK\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("tensor rank {0} rejected (must be 1..=4)")]
    ShapeRejected(usize),
    #[error("shape {shape:?} does not match {len} values")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Dense row-major f32 tensor with 1 to 4 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.len() > MAX_DIMS {
            return Err(TensorError::ShapeRejected(shape.len()));
        }
        let expected = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(TensorError::ShapeMismatch {
                shape: shape.clone(),
                len: data.len(),
            })?;
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteValue(i));
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let truncated = |expected: usize| TensorError::TruncatedPayload {
            expected,
            found: bytes.len(),
        };
        if bytes.len() < 4 {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(TensorError::BadMagic(m));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(TensorError::UnsupportedVersion(version));
        }
        if bytes[6] != DTYPE_F32 {
            return Err(TensorError::UnsupportedDtype(bytes[6]));
        }
        let ndim = bytes[7] as usize;
        if ndim == 0 || ndim > MAX_DIMS {
            return Err(TensorError::ShapeRejected(ndim));
        }
        let dims_end = HEADER_LEN + 8 * ndim;
        if bytes.len() < dims_end {
            return Err(truncated(dims_end));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut count: usize = 1;
        for chunk in bytes[HEADER_LEN..dims_end].chunks_exact(8) {
            let d = u64::from_le_bytes(chunk.try_into().unwrap());
            let d = usize::try_from(d).map_err(|_| truncated(usize::MAX))?;
            count = count.checked_mul(d).ok_or_else(|| truncated(usize::MAX))?;
            shape.push(d);
        }
        let payload_len = count.checked_mul(4).ok_or_else(|| truncated(usize::MAX))?;
        let end = dims_end
            .checked_add(payload_len)
            .ok_or_else(|| truncated(usize::MAX))?;
        if bytes.len() < end {
            return Err(truncated(end));
        }
        if bytes.len() > end {
            return Err(TensorError::TrailingBytes(bytes.len() - end));
        }
        let data: Vec<f32> = bytes[dims_end..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    Tensor::from_bytes(&bytes)
}

/// Writes via a sibling temp file and rename, so readers never observe a
/// half-written tensor.
pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    let io_err = |source| TensorError::IoFailure {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("rft.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&t.to_bytes()).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}
