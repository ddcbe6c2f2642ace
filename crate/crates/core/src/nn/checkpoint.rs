//! Binary parameter checkpoints.
//!
//! Layout: the header line `ECCLNN v1`, one JSON manifest line, then the raw
//! little-endian `f32` payload of every listed tensor in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::NetworkParams;
use super::tensor::Tensor;
use crate::error::NnError;

pub const HEADER: &str = "ECCLNN v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<TensorInfo>,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

/// An ordered list of named `f32` tensors plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Stores values and Adam moments of `params` under `prefix`.
    pub fn push_params(&mut self, prefix: &str, params: &NetworkParams<f32>) {
        for e in params.entries() {
            self.push(format!("{prefix}{}", e.name), e.value.clone());
            self.push(format!("{prefix}{}#m", e.name), e.m.clone());
            self.push(format!("{prefix}{}#v", e.name), e.v.clone());
        }
        self.meta.insert(format!("{prefix}step"), params.step_count().into());
    }

    /// Restores into `params`, whose names and shapes must match the checkpoint.
    pub fn load_params(&self, prefix: &str, params: &mut NetworkParams<f32>) -> Result<(), NnError> {
        for e in params.entries_mut() {
            for (suffix, slot) in [("", &mut e.value), ("#m", &mut e.m), ("#v", &mut e.v)] {
                let key = format!("{prefix}{}{suffix}", e.name);
                let t = self
                    .get(&key)
                    .ok_or_else(|| NnError::ManifestMismatch(format!("missing tensor `{key}`")))?;
                if t.shape() != slot.shape() {
                    return Err(NnError::ManifestMismatch(format!(
                        "tensor `{key}` has shape {:?}, network expects {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                slot.data_mut().copy_from_slice(t.data());
            }
        }
        let step = self
            .meta
            .get(&format!("{prefix}step"))
            .and_then(|v| v.as_u64())
            .unwrap_or(0);
        params.set_step_count(step);
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        let manifest = Manifest {
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorInfo { name: name.clone(), shape: t.shape().to_vec(), dtype: "f32".into() })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_string(&manifest).map_err(|e| NnError::Checkpoint { offset: 0, message: e.to_string() })?;
        writeln!(w, "{HEADER}")?;
        writeln!(w, "{json}")?;
        let mut buf = Vec::new();
        for (_, t) in &self.tensors {
            buf.clear();
            buf.reserve(t.numel() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let corrupt = |offset: usize, message: String| NnError::Checkpoint { offset: offset as u64, message };
        let header_end = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt(0, "missing header line".into()))?;
        if &bytes[..header_end] != HEADER.as_bytes() {
            return Err(corrupt(0, format!("expected header `{HEADER}`")));
        }
        let manifest_start = header_end + 1;
        let manifest_len = bytes[manifest_start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt(manifest_start, "missing manifest line".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[manifest_start..manifest_start + manifest_len])
            .map_err(|e| corrupt(manifest_start, format!("bad manifest: {e}")))?;
        let mut offset = manifest_start + manifest_len + 1;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for info in manifest.tensors {
            if info.dtype != "f32" {
                return Err(corrupt(manifest_start, format!("unsupported dtype `{}`", info.dtype)));
            }
            let numel: usize = info.shape.iter().product();
            let end = offset + numel * 4;
            if end > bytes.len() {
                return Err(corrupt(
                    bytes.len(),
                    format!("truncated payload for `{}` (needs {} bytes from offset {offset})", info.name, numel * 4),
                ));
            }
            let data = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(info.shape, data).map_err(|e| corrupt(offset, e.to_string()))?;
            tensors.push((info.name, t));
            offset = end;
        }
        if offset != bytes.len() {
            return Err(corrupt(offset, format!("{} trailing bytes", bytes.len() - offset)));
        }
        Ok(Self { tensors, meta: manifest.meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
