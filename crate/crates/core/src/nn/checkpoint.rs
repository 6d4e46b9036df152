//! Checkpoint container: `CLEFCKPT`, u32 format version, u64 manifest length,
//! JSON manifest, then raw little-endian `f32` tensor payloads in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CLEFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload section.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Model family, e.g. `patch-net` or `whole-image`.
    pub model: String,
    /// Named layer chains with their input shapes.
    pub networks: BTreeMap<String, NetworkEntry>,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
    pub step: u64,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor<f32>>,
}

impl Checkpoint {
    pub fn new(model: &str, seed: u64, step: u64) -> Self {
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                model: model.to_string(),
                networks: BTreeMap::new(),
                tensors: Vec::new(),
                seed,
                step,
                metadata: BTreeMap::new(),
            },
            tensors: Vec::new(),
        }
    }

    pub fn add_network(&mut self, name: &str, input_shape: &[usize], layers: Vec<LayerSpec>) {
        self.manifest.networks.insert(
            name.to_string(),
            NetworkEntry {
                input_shape: input_shape.to_vec(),
                layers,
            },
        );
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        let offset = self.tensors.iter().map(|t| 4 * t.len() as u64).sum();
        self.manifest.tensors.push(TensorEntry {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        self.tensors.push(tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.manifest
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Decode(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn network(&self, name: &str) -> Result<&NetworkEntry> {
        self.manifest
            .networks
            .get(name)
            .ok_or_else(|| Error::Decode(format!("checkpoint has no network `{name}`")))
    }

    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.manifest)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let payload: usize = self.tensors.iter().map(|t| 4 * t.len()).sum();
        let mut out = Vec::with_capacity(20 + manifest.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Decode(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + mlen).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        let payload = &bytes[20 + mlen..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut expected_offset = 0u64;
        for entry in &manifest.tensors {
            if entry.offset != expected_offset {
                return Err(bad(&format!("tensor `{}` has offset {}", entry.name, entry.offset)));
            }
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let raw = payload
                .get(start..start + 4 * n)
                .ok_or_else(|| bad(&format!("truncated payload for `{}`", entry.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::new(entry.shape.clone(), data)?);
            expected_offset += 4 * n as u64;
        }
        if expected_offset as usize != payload.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Checkpoint { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
