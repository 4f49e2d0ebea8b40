//! Run manifests and output directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path as given on the command line → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_at: u64,
    pub finished_at: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Files produced by a command, written only once the command succeeds.
pub struct Output {
    dir: PathBuf,
    force: bool,
    files: BTreeMap<PathBuf, Vec<u8>>,
    manifest: RunManifest,
}

impl Output {
    /// Checks that `dir` is fresh (missing or empty) unless `force` is set.
    pub fn new(dir: &Path, force: bool, command: &str, config: serde_json::Value, seed: Option<u64>) -> Result<Self, Failure> {
        if !force && dir.exists() {
            let empty = fs::read_dir(dir)
                .map_err(|e| Failure::io(dir, e))?
                .next()
                .is_none();
            if !empty {
                return Err(Failure::Usage(format!(
                    "output directory {} is not empty (pass --force to write into it)",
                    dir.display()
                )));
            }
        }
        Ok(Output {
            dir: dir.to_path_buf(),
            force,
            files: BTreeMap::new(),
            manifest: RunManifest {
                command: command.to_string(),
                config,
                inputs: BTreeMap::new(),
                seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_at: unix_now(),
                finished_at: 0,
            },
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        let hash = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn add(&mut self, name: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(name.into(), bytes.into());
    }

    pub fn commit(mut self) -> Result<(), Failure> {
        if self.dir.exists() && !self.force && fs::read_dir(&self.dir).map_err(|e| Failure::io(&self.dir, e))?.next().is_some() {
            return Err(Failure::Usage(format!("output directory {} appeared during the run", self.dir.display())));
        }
        fs::create_dir_all(&self.dir).map_err(|e| Failure::io(&self.dir, e))?;
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Failure::io(&path, e))?;
        }
        self.manifest.finished_at = unix_now();
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest is serializable") + "\n";
        let path = self.dir.join(MANIFEST);
        fs::write(&path, json).map_err(|e| Failure::io(&path, e))
    }
}
