//! Run manifests: every command writes `<output>.manifest.json` next to its
//! primary output, recording the resolved settings, seeds, and SHA-256
//! hashes of all inputs and outputs. Re-running the same command with the
//! same config and seed reproduces every output byte-identically; the
//! manifest differs only in its timestamp field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use symcorr::{Error, Result};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Seconds since the Unix epoch; the only field that varies between
    /// reproductions of the same run.
    pub timestamp_unix: u64,
    /// Fully resolved settings (flag/config/default merge already applied).
    pub settings: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    /// Input path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output path → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            settings: BTreeMap::new(),
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) {
        self.settings.insert(key.to_string(), value.to_string());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seeds.push(seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_hex(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_hex(path)?;
        self.outputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Write `<primary_output>.manifest.json` atomically and return its path.
    pub fn write_beside(&self, primary_output: &Path) -> Result<PathBuf> {
        let mut name = primary_output.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
        Ok(path)
    }
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

/// Atomic file write: a uniquely named temporary sibling is persisted over
/// the destination, so interrupted runs never leave partial outputs.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Error::Io(e.error))
        .map(|_| ())
}
