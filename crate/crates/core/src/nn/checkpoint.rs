//! Checkpoint container: one JSON manifest line naming every tensor with its
//! byte offset, followed by the concatenated little-endian payloads.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_FORMAT: &str = "protomask-checkpoint/1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset from the first payload byte.
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    meta: serde_json::Value,
    tensors: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T = f64> {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let nbytes = t.len() * T::BYTES;
            entries.push(CheckpointEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                nbytes,
            });
            offset += nbytes;
        }
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            dtype: T::DTYPE.into(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        serde_json::to_writer(&mut *w, &manifest)?;
        w.write_all(b"\n")?;
        for (_, t) in &self.tensors {
            w.write_all(&t.payload_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead, path: &Path) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)
            .map_err(|e| Error::format(path, "manifest", e.to_string()))?;
        let manifest: Manifest = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::format(path, "manifest", e.to_string()))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::format(path, "format", manifest.format));
        }
        let width = match manifest.dtype.as_str() {
            "f64" => 8,
            "f32" => 4,
            other => return Err(Error::format(path, "dtype", other)),
        };
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)
            .map_err(|e| Error::format(path, "payload", e.to_string()))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(e.nbytes);
            if n * width != e.nbytes || end.is_none_or(|end| end > payload.len()) {
                return Err(Error::format(path, format!("tensor {}", e.name), "extent out of range"));
            }
            let bytes = &payload[e.offset..e.offset + e.nbytes];
            let t = Tensor::from_payload(&e.shape, &manifest.dtype, bytes)
                .map_err(|err| Error::format(path, format!("tensor {}", e.name), err.to_string()))?;
            tensors.push((e.name.clone(), t));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut std::io::BufReader::new(f), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_and_round_trip() {
        let mut ck = Checkpoint::<f64>::new(serde_json::json!({"iter": 3}));
        ck.push("a", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        ck.push("b", Tensor::from_f64(&[1, 3], &[3.0, 4.0, 5.0]).unwrap());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let manifest: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(manifest["tensors"][1]["offset"], 16);
        assert_eq!(buf.len() - nl - 1, 40);
        let back = Checkpoint::<f64>::read_from(&mut &buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn truncated_checkpoint_names_tensor() {
        let mut ck = Checkpoint::<f32>::new(serde_json::Value::Null);
        ck.push("weights", Tensor::zeros(&[4]));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        buf.pop();
        let err = Checkpoint::<f32>::read_from(&mut &buf[..], Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("tensor weights"), "{err}");
    }
}
