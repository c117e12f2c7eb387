//! Checkpoint file format.
//!
//! ```text
//! b"CBAD1\n"
//! u64 little-endian manifest length
//! UTF-8 JSON manifest
//! payload: little-endian f64 values, row-major, at the manifest offsets
//! ```
//!
//! Tensor `offset` and `len` in the manifest are byte counts relative to the
//! start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Arch, ModelParams};
use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"CBAD1\n";
const VERSION: u32 = 1;

/// Provenance recorded alongside the tensors.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(params: ModelParams, meta: CheckpointMeta) -> Self {
        Self { params, adam: None, meta }
    }

    pub fn arch(&self) -> Arch {
        self.params.arch()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    arch: Arch,
    tensors: Vec<TensorEntry>,
    metadata: CheckpointMeta,
}

fn groups(ckpt: &Checkpoint) -> Vec<(&'static str, &ModelParams)> {
    let mut g = vec![("", &ckpt.params)];
    if let Some(a) = &ckpt.adam {
        g.push(("adam.m.", &a.m));
        g.push(("adam.v.", &a.v));
    }
    g
}

/// Serializes to the exact byte layout of the file.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let arch = ckpt.arch();
    let mut meta = ckpt.meta.clone();
    meta.adam_step = ckpt.adam.as_ref().map(|a| a.step);
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (prefix, params) in groups(ckpt) {
        params.check_same_arch(&ckpt.params)?;
        for ((name, shape), data) in arch.tensor_shapes().into_iter().zip(params.tensors()) {
            tensors.push(TensorEntry {
                name: format!("{prefix}{name}"),
                shape,
                dtype: "f64le".into(),
                offset: payload.len() as u64,
                len: (data.len() * 8) as u64,
            });
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = serde_json::to_vec(&Manifest { version: VERSION, arch, tensors, metadata: meta })?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(Error::CorruptManifest("missing manifest length".into()));
    }
    let mlen = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < mlen {
        return Err(Error::CorruptManifest(format!("manifest length {mlen} exceeds file")));
    }
    let manifest: Manifest =
        serde_json::from_slice(&rest[..mlen]).map_err(|e| Error::CorruptManifest(e.to_string()))?;
    if manifest.version != VERSION {
        return Err(Error::CorruptManifest(format!("unsupported version {}", manifest.version)));
    }
    let payload = &rest[mlen..];
    let arch = Arch::new(manifest.arch.c_in, manifest.arch.k_out)
        .map_err(|e| Error::CorruptManifest(e.to_string()))?;

    let read = |name: &str| -> Result<Vec<f64>> {
        let e = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::CorruptManifest(format!("missing tensor {name}")))?;
        if e.dtype != "f64le" || e.len % 8 != 0 {
            return Err(Error::CorruptManifest(format!("tensor {name} has dtype {} len {}", e.dtype, e.len)));
        }
        let (start, end) = (e.offset as usize, (e.offset + e.len) as usize);
        if end > payload.len() {
            return Err(Error::CorruptPayload(format!(
                "tensor {name} needs bytes {start}..{end}, payload has {}",
                payload.len()
            )));
        }
        Ok(payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let group = |prefix: &str| -> Result<ModelParams> {
        let tensors = arch
            .tensor_shapes()
            .iter()
            .map(|(name, _)| read(&format!("{prefix}{name}")))
            .collect::<Result<Vec<_>>>()?;
        ModelParams::from_tensors(arch, tensors).map_err(|e| Error::CorruptPayload(e.to_string()))
    };

    let params = group("")?;
    let adam = match manifest.metadata.adam_step {
        Some(step) => Some(AdamState { m: group("adam.m.")?, v: group("adam.v.")?, step }),
        None => None,
    };
    Ok(Checkpoint { params, adam, meta: manifest.metadata })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
