//! On-disk tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes  "VUQTNSR1"
//! header_len  u64
//! header      header_len bytes of UTF-8 JSON
//! payload     concatenated little-endian f32 arrays
//! ```
//!
//! The header is `{"dtype":"f32","seed":..,"meta":{..},"tensors":[{"name",
//! "shape","offset","len"}]}` where `offset`/`len` count f32 elements from
//! the start of the payload. The payload must be exactly as long as the
//! tensors require.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"VUQTNSR1";

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor container (bad magic)")]
    BadMagic,
    #[error("corrupt header: {0}")]
    Header(String),
    #[error("payload holds {actual} bytes, header describes {expected}")]
    PayloadSize { expected: u64, actual: u64 },
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    seed: u64,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

/// Named f32 tensors plus a free-form JSON metadata block.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub seed: u64,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    len: t.numel(),
                };
                offset += t.numel();
                e
            })
            .collect();
        let header = Header {
            dtype: "f32".into(),
            seed: self.seed,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorFileError> {
        if bytes.len() < 16 {
            return Err(TensorFileError::Header("file shorter than the fixed preamble".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(TensorFileError::BadMagic);
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let rest = (bytes.len() - 16) as u64;
        if header_len > rest {
            return Err(TensorFileError::Header(format!(
                "header length {header_len} exceeds remaining {rest} bytes"
            )));
        }
        let header_end = 16 + header_len as usize;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| TensorFileError::Header(e.to_string()))?;
        if header.dtype != "f32" {
            return Err(TensorFileError::Header(format!("unsupported dtype {}", header.dtype)));
        }
        let payload = &bytes[header_end..];
        let mut expected = 0usize;
        for e in &header.tensors {
            if e.offset != expected || e.shape.iter().product::<usize>() != e.len {
                return Err(TensorFileError::Header(format!("inconsistent entry `{}`", e.name)));
            }
            expected += e.len;
        }
        if payload.len() != expected * 4 {
            return Err(TensorFileError::PayloadSize {
                expected: expected as u64 * 4,
                actual: payload.len() as u64,
            });
        }
        let tensors = header
            .tensors
            .into_iter()
            .map(|e| {
                let data = payload[e.offset * 4..(e.offset + e.len) * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let t = Tensor::from_vec(e.shape, data).expect("length validated");
                (e.name, t)
            })
            .collect();
        Ok(Self {
            seed: header.seed,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), TensorFileError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self, TensorFileError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Writes through a temporary sibling and renames, so a crash never
    /// leaves a half-written file under `path`.
    pub fn save(&self, path: &Path) -> Result<(), TensorFileError> {
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TensorFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorFile {
        TensorFile {
            seed: 7,
            meta: serde_json::json!({"epochs": 3}),
            tensors: vec![
                ("a".into(), Tensor::from_vec(vec![2, 2], vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE]).unwrap()),
                ("b".into(), Tensor::from_vec(vec![3], vec![0.1, 0.2, 0.3]).unwrap()),
            ],
        }
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let back = TensorFile::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = sample().to_bytes();
        let err = TensorFile::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, TensorFileError::PayloadSize { expected: 28, actual: 25 }));
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[20] = b'#';
        assert!(matches!(TensorFile::from_bytes(&bytes), Err(TensorFileError::Header(_))));
        assert!(matches!(TensorFile::from_bytes(b"NOTMAGIC12345678"), Err(TensorFileError::BadMagic)));
        assert!(TensorFile::from_bytes(b"VUQ").is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        sample().save(&path).unwrap();
        assert_eq!(TensorFile::load(&path).unwrap(), sample());
        assert!(!path.with_extension("partial").exists());
    }
}
