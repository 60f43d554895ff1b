//! Readers and writers for every on-disk format the toolkit touches.
//!
//! Other modules only see data through the types re-exported here.

mod intrinsics;
mod raster;
mod tensor;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use intrinsics::CameraIntrinsics;
pub use raster::{load_mask, luma, DepthImage, GroundTruthMask, RasterError, RasterImage};
pub use tensor::{read_tensor, write_tensor, Tensor, TensorError, DTYPE_F32, MAGIC, VERSION};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure on {path}: {source}")]
    Fs {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed JSON on line {line} of {path}: {source}")]
    JsonLine {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid camera intrinsics {0:?}")]
    InvalidIntrinsics(CameraIntrinsics),
}

impl IoError {
    pub(crate) fn fs(path: &Path, source: std::io::Error) -> Self {
        IoError::Fs {
            path: path.display().to_string(),
            source,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::fs(path, e))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Pretty JSON with a trailing newline, written through a temp file + rename.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| IoError::fs(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| IoError::fs(path, e))
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, IoError> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| IoError::fs(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| IoError::fs(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|source| IoError::JsonLine {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| IoError::fs(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            source,
        })?;
        writeln!(w, "{line}").map_err(|e| IoError::fs(path, e))?;
    }
    w.flush().map_err(|e| IoError::fs(path, e))
}
