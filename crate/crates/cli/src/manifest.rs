//! Run manifest: records, per completed stage, the cache key it ran under and
//! a content hash for every file it produced. Serialized as stable pretty
//! JSON (sorted maps, no timestamps) so identical runs produce identical
//! manifests byte for byte.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    /// Stage name -> record; `BTreeMap` keeps serialization order stable.
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Cache key: hash of (stage name, config slice, input artifact hashes).
    pub key: String,
    /// Output path relative to the run directory -> SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_FILE)
    }

    /// Loads the manifest if present; a missing or unreadable manifest is an
    /// empty one (the run starts cold rather than failing).
    pub fn load(run_dir: &Path) -> Self {
        let path = Self::path(run_dir);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
                log::warn!("ignoring unparseable manifest {}: {e}", path.display());
                Self::default()
            }),
            Err(_) => Self::default(),
        }
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), CliError> {
        let path = Self::path(run_dir);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text)
            .map_err(|e| CliError::stage("manifest", format!("write {}: {e}", path.display())))
    }

    /// A stage is fresh when its recorded key matches and every recorded
    /// output still exists with the recorded hash.
    pub fn is_fresh(&self, run_dir: &Path, stage: &str, key: &str) -> bool {
        let Some(record) = self.stages.get(stage) else {
            return false;
        };
        if record.key != key {
            return false;
        }
        record.outputs.iter().all(|(rel, want)| {
            hash_file(&run_dir.join(rel)).map(|got| got == *want).unwrap_or(false)
        })
    }

    /// Records a completed stage from its concrete output files.
    pub fn record(
        &mut self,
        run_dir: &Path,
        stage: &str,
        key: String,
        outputs: &[PathBuf],
    ) -> Result<(), CliError> {
        let mut hashed = BTreeMap::new();
        for path in outputs {
            let rel = path
                .strip_prefix(run_dir)
                .unwrap_or(path)
                .to_string_lossy()
                .replace('\\', "/");
            let digest = hash_file(path)
                .map_err(|e| CliError::stage(stage, format!("hash {}: {e}", path.display())))?;
            hashed.insert(rel, digest);
        }
        self.stages.insert(stage.to_string(), StageRecord { key, outputs: hashed });
        Ok(())
    }

}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        write!(s, "{b:02x}").expect("writing to String");
        s
    })
}
