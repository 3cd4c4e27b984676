//! Checkpoint files: a JSON manifest (names and shapes) followed by a
//! little-endian float64 blob. Round-trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ParamSet, PolicyConfig};
use crate::autodiff::Tensor;

const MAGIC: &[u8; 4] = b"TLCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    /// Hash of the training configuration that produced this checkpoint.
    pub config_hash: String,
    pub method: String,
    pub policy_config: PolicyConfig,
    pub discriminator_config: Option<PolicyConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    meta: CheckpointMeta,
    entries: Vec<(String, usize, usize)>,
}

/// All tensors of a training state, name-prefixed by group:
/// `policy.*`, `disc.*`, `opt.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: ParamSet,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Checkpoint { meta, tensors: ParamSet::new() }
    }

    pub fn insert_group(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            self.tensors.insert(&format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Extract the tensors under `prefix.` with the prefix stripped.
    pub fn extract_group(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        let full = format!("{prefix}.");
        for (name, t) in self.tensors.iter() {
            if let Some(stripped) = name.strip_prefix(&full) {
                out.insert(stripped, t.clone());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let manifest = Manifest {
            meta: self.meta.clone(),
            entries: self
                .tensors
                .iter()
                .map(|(n, t)| (n.to_string(), t.rows(), t.cols()))
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.tensors.total_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.tensors.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let fail = |m: &str| CheckpointError::Format(m.to_string());
        if bytes.len() < 16 {
            return Err(fail("truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let blob_start = 16usize
            .checked_add(json_len)
            .ok_or_else(|| fail("manifest length overflow"))?;
        if bytes.len() < blob_start {
            return Err(fail("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[16..blob_start])?;
        let mut tensors = ParamSet::new();
        let mut offset = blob_start;
        for (name, rows, cols) in &manifest.entries {
            if tensors.contains(name) {
                return Err(CheckpointError::Format(format!("duplicate tensor {name}")));
            }
            let count = rows
                .checked_mul(*cols)
                .ok_or_else(|| fail("tensor size overflow"))?;
            let nbytes = count.checked_mul(8).ok_or_else(|| fail("tensor size overflow"))?;
            let end = offset.checked_add(nbytes).ok_or_else(|| fail("offset overflow"))?;
            if bytes.len() < end {
                return Err(fail("truncated blob"));
            }
            let data: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(
                name,
                Tensor::new(*rows, *cols, data)
                    .map_err(|e| CheckpointError::Format(e.to_string()))?,
            );
            offset = end;
        }
        if offset != bytes.len() {
            return Err(fail("trailing bytes after blob"));
        }
        Ok(Checkpoint { meta: manifest.meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// FNV-1a over a config's canonical text form.
pub fn config_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{HeadKind, PolicyNet};

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            epoch: 3,
            seed: 9,
            config_hash: config_hash("x"),
            method: "bc_gauss_ll".into(),
            policy_config: PolicyConfig { head: HeadKind::Gaussian, ..Default::default() },
            discriminator_config: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = PolicyNet::init(PolicyConfig { embed_dim: 8, heads: 2, ..Default::default() }, 1)
            .unwrap();
        let mut ck = Checkpoint::new(meta());
        ck.insert_group("policy", &net.params);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let params = back.extract_group("policy");
        for (name, t) in net.params.iter() {
            let restored = params.get(name);
            for (a, b) in t.data().iter().zip(restored.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_malformed_inputs() {
        assert!(Checkpoint::from_bytes(b"").is_err());
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let mut ck = Checkpoint::new(meta());
        ck.tensors.insert("a", Tensor::row(vec![1.0, 2.0]));
        let mut bytes = ck.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let ok = ck.to_bytes().unwrap();
        let mut extra = ok.clone();
        extra.extend_from_slice(&[0u8; 3]);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
