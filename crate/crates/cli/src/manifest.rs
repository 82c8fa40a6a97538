//! `manifest.json` at the root of a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Relative path → SHA-256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn manifest_path(run_dir: &Path) -> PathBuf {
    run_dir.join("manifest.json")
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Option<Manifest>> {
        let path = manifest_path(run_dir);
        if !path.is_file() {
            return Ok(None);
        }
        let s = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&s).map(Some).map_err(|e| CliError::io(&path, e))
    }

    /// Existing manifest for the same config, or a fresh one.
    pub fn open(run_dir: &Path, config_hash: &str, seed: u64) -> Result<Manifest> {
        let fresh = Manifest { config_hash: Some(config_hash.to_string()), seed: Some(seed), stages: BTreeMap::new() };
        Ok(match Manifest::load(run_dir)? {
            Some(m) if m.config_hash.as_deref() == Some(config_hash) => m,
            _ => fresh,
        })
    }

    pub fn record(&mut self, run_dir: &Path, stage: &str, artifacts: &[PathBuf]) -> Result<()> {
        let mut rec = StageRecord::default();
        for p in artifacts {
            let rel = p.strip_prefix(run_dir).unwrap_or(p);
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            rec.artifacts.insert(key, file_sha256(p)?);
        }
        self.stages.insert(stage.to_string(), rec);
        Ok(())
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = manifest_path(run_dir);
        fs::create_dir_all(run_dir).map_err(|e| CliError::io(run_dir, e))?;
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        fs::write(&path, s).map_err(|e| CliError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_relative_paths_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a").join("b.txt");
        fs::create_dir_all(f.parent().unwrap()).unwrap();
        fs::write(&f, "abc").unwrap();
        let mut m = Manifest::open(dir.path(), "h1", 4).unwrap();
        m.record(dir.path(), "stack", &[f]).unwrap();
        m.save(dir.path()).unwrap();
        let back = Manifest::open(dir.path(), "h1", 4).unwrap();
        assert_eq!(
            back.stages["stack"].artifacts["a/b.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(Manifest::open(dir.path(), "h2", 4).unwrap().stages.is_empty());
    }
}
