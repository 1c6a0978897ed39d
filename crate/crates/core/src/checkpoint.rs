//! Checkpoint files: an 8-byte magic, the manifest length as a little-endian
//! u64, a JSON manifest, then every parameter as little-endian f64 in
//! manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::text::Vocab;

pub const MAGIC: &[u8; 8] = b"STEPWCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub step: usize,
    pub config: RunConfig,
    pub vocab: Vocab,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub payload: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: usize) -> Self {
        let mut tensors = Vec::new();
        let mut payload = Vec::with_capacity(model.store.num_scalars());
        for p in model.store.iter() {
            tensors.push(TensorEntry { name: p.name.clone(), shape: p.tensor.shape().to_vec(), offset: payload.len() * 8 });
            payload.extend_from_slice(p.tensor.data());
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config_hash: model.config.architecture_hash(),
            step,
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            tensors,
        };
        Checkpoint { manifest, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + header.len() + self.payload.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..header_end])?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("format version {} is not {FORMAT_VERSION}", manifest.format_version)));
        }
        let body = &bytes[header_end..];
        if !body.len().is_multiple_of(8) {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let payload: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let mut expected = 0;
        for t in &manifest.tensors {
            if t.offset != expected * 8 {
                return Err(Error::Checkpoint(format!("tensor {} starts at byte {}, expected {}", t.name, t.offset, expected * 8)));
            }
            expected += t.shape.iter().product::<usize>();
        }
        if expected != payload.len() {
            return Err(Error::Checkpoint(format!("manifest describes {expected} values, payload has {}", payload.len())));
        }
        Ok(Checkpoint { manifest, payload })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the model. With `run_config`, its architecture hash must
    /// match the stored one; decode settings and the seed come from it.
    pub fn into_model(self, run_config: Option<&RunConfig>) -> Result<Model> {
        let mut config = self.manifest.config.clone();
        if config.architecture_hash() != self.manifest.config_hash {
            return Err(Error::Checkpoint("stored config does not match the stored hash".into()));
        }
        if let Some(run) = run_config {
            let h = run.architecture_hash();
            if h != self.manifest.config_hash {
                return Err(Error::Checkpoint(format!("config hash {h} does not match checkpoint hash {}", self.manifest.config_hash)));
            }
            config = run.clone();
        }
        let mut model = Model::new(config, self.manifest.vocab)?;
        let ids: Vec<_> = model.store.ids().collect();
        if ids.len() != self.manifest.tensors.len() {
            return Err(Error::Checkpoint(format!("checkpoint has {} tensors, model has {}", self.manifest.tensors.len(), ids.len())));
        }
        for (id, entry) in ids.into_iter().zip(&self.manifest.tensors) {
            if model.store.name(id) != entry.name || model.store.get(id).shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model tensor {} {:?}",
                    entry.name,
                    entry.shape,
                    model.store.name(id),
                    model.store.get(id).shape()
                )));
            }
            let start = entry.offset / 8;
            let n = entry.shape.iter().product::<usize>();
            model.store.get_mut(id).data_mut().copy_from_slice(&self.payload[start..start + n]);
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests;
