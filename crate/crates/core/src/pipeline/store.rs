//! Artifact directory with atomic writes and a digest manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest over the stage's config slice and input artifacts.
    pub inputs: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    /// Writes through a temporary sibling and renames it into place.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<String> {
        let target = self.path(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let tmp = target.with_file_name(format!(".{}.tmp", target.file_name().and_then(|n| n.to_str()).unwrap_or("artifact")));
        fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, &target).map_err(|e| Error::io(format!("renaming onto {}", target.display()), e))?;
        Ok(sha256_hex(bytes))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn read(&self, name: &str) -> Result<Vec<u8>> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(Error::MissingArtifact(p));
        }
        fs::read(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))
    }

    pub fn read_string(&self, name: &str) -> Result<String> {
        let bytes = self.read(name)?;
        String::from_utf8(bytes).map_err(|e| Error::Format {
            path: self.path(name),
            reason: e.to_string(),
        })
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let text = self.read_string(name)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: self.path(name),
            reason: e.to_string(),
        })
    }

    pub fn digest(&self, name: &str) -> Result<String> {
        Ok(sha256_hex(&self.read(name)?))
    }

    pub fn manifest(&self) -> Result<Manifest> {
        if self.exists(MANIFEST) {
            self.read_json(MANIFEST)
        } else {
            Ok(Manifest::default())
        }
    }

    /// True when the stage last ran on the same inputs and its outputs are intact.
    pub fn up_to_date(&self, stage: &str, inputs: &str) -> Result<bool> {
        let manifest = self.manifest()?;
        let Some(rec) = manifest.stages.get(stage) else {
            return Ok(false);
        };
        if rec.inputs != inputs || rec.outputs.is_empty() {
            return Ok(false);
        }
        for (name, digest) in &rec.outputs {
            if !self.exists(name) || &self.digest(name)? != digest {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn record(&self, stage: &str, inputs: String, outputs: BTreeMap<String, String>) -> Result<()> {
        let mut manifest = self.manifest()?;
        manifest.stages.insert(stage.to_string(), StageRecord { inputs, outputs });
        self.write_json(MANIFEST, &manifest)?;
        Ok(())
    }
}

/// Digest of a stage's inputs: its name, a config slice and upstream digests.
pub fn input_key<T: Serialize>(stage: &str, config: &T, upstream: &[String]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config)?);
    for d in upstream {
        h.update([0]);
        h.update(d.as_bytes());
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
