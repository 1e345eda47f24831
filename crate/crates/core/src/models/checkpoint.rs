//! `CPNN` checkpoint container.
//!
//! ```text
//! "CPNN" | version: u32 LE | json_len: u64 LE | JSON metadata | f32 LE blobs
//! ```
//!
//! The blobs follow the metadata manifest order; their byte length must equal
//! the product of the declared shapes times four.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelError, NetworkSpec, Result};
use crate::encoder::{Alphabet, ALPHABET_SIZE};
use crate::nn::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CPNN";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub alphabet: String,
    pub config_digest: String,
    pub epoch: usize,
    pub seed: u64,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        Self { alphabet: Alphabet::default().as_string(), config_digest: String::new(), epoch: 0, seed: crate::DEFAULT_SEED }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    #[serde(flatten)]
    meta: CheckpointMeta,
    manifest: Vec<ManifestEntry>,
}

impl Model<f32> {
    /// Serializes the model into checkpoint bytes.
    pub fn to_checkpoint_bytes(&self, meta: &CheckpointMeta) -> Vec<u8> {
        let manifest = self
            .params
            .iter()
            .map(|p| ManifestEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
            .collect();
        let header = Header { spec: self.spec.clone(), meta: meta.clone(), manifest };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + 4 * self.params.iter().map(|p| p.value.len()).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes(meta)).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
    }

    /// Parses checkpoint bytes. Nothing is returned unless every check
    /// passes.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, CheckpointMeta)> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(ModelError::ManifestLength { expected: HEADER_LEN as u64, actual: bytes.len() as u64 });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::UnsupportedVersion { found: version, supported: CHECKPOINT_VERSION });
        }
        let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let json_end = (HEADER_LEN as u64).saturating_add(json_len);
        if json_end > bytes.len() as u64 {
            return Err(ModelError::ManifestLength { expected: json_end, actual: bytes.len() as u64 });
        }
        let json_end = json_end as usize;
        let header: Header =
            serde_json::from_slice(&bytes[HEADER_LEN..json_end]).map_err(|e| ModelError::Metadata(e.to_string()))?;
        let blob_bytes: u64 = header.manifest.iter().map(|m| 4 * m.shape.iter().product::<usize>() as u64).sum();
        let expected = json_end as u64 + blob_bytes;
        if expected != bytes.len() as u64 {
            return Err(ModelError::ManifestLength { expected, actual: bytes.len() as u64 });
        }
        if header.meta.alphabet.chars().count() != ALPHABET_SIZE {
            return Err(ModelError::Metadata(format!(
                "alphabet has {} symbols, expected {ALPHABET_SIZE}",
                header.meta.alphabet.chars().count()
            )));
        }
        if header.meta.alphabet != Alphabet::default().as_string() {
            log::warn!("checkpoint alphabet differs from the default printable-ASCII alphabet");
        }
        let mut model = Model::<f32>::build(&header.spec, 0)?;
        if model.params.len() != header.manifest.len() {
            return Err(ModelError::Metadata(format!(
                "manifest lists {} tensors, spec declares {}",
                header.manifest.len(),
                model.params.len()
            )));
        }
        let mut offset = json_end;
        let ids: Vec<_> = model.params.ids().collect();
        for (id, entry) in ids.into_iter().zip(&header.manifest) {
            let p = model.params.param(id);
            if p.name != entry.name {
                return Err(ModelError::Metadata(format!("tensor `{}` found where `{}` was expected", entry.name, p.name)));
            }
            p.value.expect_shape(&entry.shape, &entry.name).map_err(|e| ModelError::Metadata(e.to_string()))?;
            let n: usize = entry.shape.iter().product();
            let data = bytes[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            model.params[id] = Tensor::from_vec(&entry.shape, data)?;
            offset += 4 * n;
        }
        Ok((model, header.meta))
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
