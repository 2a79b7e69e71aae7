//! Binary checkpoint: magic, header length, JSON header, little-endian f64 data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, PPTNet};
use crate::features::io::atomic_write;
use crate::features::NormStats;
use crate::numeric::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"PPTNET1";

/// Data context stored with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub feature_names: Vec<String>,
    pub normalization: Option<NormStats>,
    /// Output features included in the training loss.
    pub target_mask: Vec<bool>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: CheckpointMeta,
    params: Vec<ManifestEntry>,
}

impl PPTNet {
    pub fn to_checkpoint_bytes(&self, meta: &CheckpointMeta) -> Result<Vec<u8>, ModelError> {
        let mut params = Vec::new();
        let mut offset = 0;
        for p in self.store.iter() {
            params.push(ManifestEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset,
            });
            offset += p.value.len() * 8;
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            metadata: meta.clone(),
            params,
        })?;
        let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 8 + header.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.store.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(PPTNet, CheckpointMeta), ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        let m = CHECKPOINT_MAGIC.len();
        if bytes.len() < m + 8 || &bytes[..m] != CHECKPOINT_MAGIC {
            return Err(bad("missing PPTNET1 magic"));
        }
        let hlen = u64::from_le_bytes(bytes[m..m + 8].try_into().expect("8 bytes")) as usize;
        let data_start = m + 8 + hlen;
        if bytes.len() < data_start {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[m + 8..data_start])?;
        let data = &bytes[data_start..];

        let mut net = PPTNet::new(header.config, 0)?;
        if header.params.len() != net.store.len() {
            return Err(bad(&format!(
                "manifest lists {} parameters, configuration needs {}",
                header.params.len(),
                net.store.len()
            )));
        }
        for entry in &header.params {
            let id = net
                .store
                .find(&entry.name)
                .ok_or_else(|| bad(&format!("unknown parameter {}", entry.name)))?;
            let target = &mut net.store.get_mut(id).value;
            if target.shape() != entry.shape.as_slice() {
                return Err(bad(&format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    entry.name,
                    entry.shape,
                    target.shape()
                )));
            }
            let end = entry.offset + target.len() * 8;
            if end > data.len() {
                return Err(bad(&format!(
                    "parameter {} extends past end of file",
                    entry.name
                )));
            }
            let values: Vec<f64> = data[entry.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(&format!(
                    "parameter {} holds non-finite values",
                    entry.name
                )));
            }
            *target = Tensor::new(entry.shape.clone(), values)?;
        }
        Ok((net, header.metadata))
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<(), ModelError> {
        atomic_write(path, &self.to_checkpoint_bytes(meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(PPTNet, CheckpointMeta), ModelError> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}
