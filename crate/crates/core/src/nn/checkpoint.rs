//! Parameter serialization: a serde manifest describing layout plus a flat
//! little-endian `f32` blob. Several networks may share one blob; each
//! manifest records where its parameters start.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerKind};
use super::network::Network;
use super::NnError;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetManifest {
    pub param_version: u64,
    /// Index of the first parameter of this network in the shared blob.
    pub offset: usize,
    pub param_count: usize,
    pub layers: Vec<LayerManifest>,
}

impl Network {
    /// Appends this network's parameters to `blob` and describes them.
    pub fn export(&self, blob: &mut Vec<f32>) -> NetManifest {
        let offset = blob.len();
        for l in self.layers() {
            blob.extend_from_slice(&l.weight);
            blob.extend_from_slice(&l.bias);
        }
        NetManifest {
            param_version: self.version(),
            offset,
            param_count: self.param_count(),
            layers: self.layers().iter().map(|l| LayerManifest { kind: l.kind, frozen: l.frozen }).collect(),
        }
    }

    pub fn import(manifest: &NetManifest, blob: &[f32]) -> Result<Self, NnError> {
        let end = manifest.offset.checked_add(manifest.param_count).ok_or(NnError::Manifest("offset overflow"))?;
        if end > blob.len() {
            return Err(NnError::BlobSize { expected: end, actual: blob.len() });
        }
        let mut cursor = manifest.offset;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for lm in &manifest.layers {
            lm.kind.validate()?;
            let (w, b) = lm.kind.param_lens();
            if cursor + w + b > end {
                return Err(NnError::Manifest("layers exceed declared parameter count"));
            }
            let weight = blob[cursor..cursor + w].to_vec();
            let bias = blob[cursor + w..cursor + w + b].to_vec();
            cursor += w + b;
            layers.push(Layer { kind: lm.kind, frozen: lm.frozen, weight, bias });
        }
        if cursor != end {
            return Err(NnError::Manifest("declared parameter count disagrees with layers"));
        }
        if !blob[manifest.offset..end].iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("checkpoint"));
        }
        Network::from_parts(layers, manifest.param_version)
    }
}

pub fn encode_blob(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_blob(bytes: &[u8]) -> Result<Vec<f32>, NnError> {
    if bytes.len() % 4 != 0 {
        return Err(NnError::BlobSize { expected: bytes.len() / 4 * 4, actual: bytes.len() });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}
