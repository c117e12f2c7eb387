//! Run manifests: what was run, with which inputs, so it can be replayed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chebysfda_core::adapt::AdaptConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, without `--out` and its value.
    pub args: Vec<String>,
    pub config: AdaptConfig,
    pub seed: u64,
    pub inputs: Vec<InputHash>,
    /// Files written, relative to the run directory.
    pub outputs: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file, or of a directory's files in name order (each name
/// and its bytes).
pub fn hash_path(path: &Path) -> Result<String> {
    let meta = fs::metadata(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut h = Sha256::new();
    if meta.is_dir() {
        let mut names: Vec<_> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.file_name()))
            .collect::<std::io::Result<Vec<_>>>()?;
        names.sort();
        for name in names {
            let p = path.join(&name);
            if p.is_file() {
                let name = name.to_string_lossy();
                h.update((name.len() as u64).to_le_bytes());
                h.update(name.as_bytes());
                let bytes = fs::read(&p)?;
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
        }
    } else {
        h.update(fs::read(path)?);
    }
    Ok(hex(&h.finalize()))
}

pub fn input(role: &str, path: &Path) -> Result<InputHash> {
    Ok(InputHash { role: role.into(), path: path.to_path_buf(), sha256: hash_path(path)? })
}

/// Drops `--out <dir>` / `--out=<dir>` from an argument list.
pub fn strip_out(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out" {
            skip = true;
            continue;
        }
        if a.starts_with("--out=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a run manifest", path.display()))
    }

    /// Fails unless every recorded input still hashes to its recorded digest.
    pub fn verify_inputs(&self) -> Result<()> {
        for i in &self.inputs {
            let now = hash_path(&i.path)?;
            if now != i.sha256 {
                bail!("input {} ({}) changed since the run was recorded", i.role, i.path.display());
            }
        }
        Ok(())
    }
}
