//! Run manifests and atomic file output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Description of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    /// SHA-256 of the effective configuration (after command-line overrides).
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputFile>,
    pub wall_clock_seconds: f64,
    /// Parameters used or produced, for quick inspection.
    pub parameters: serde_json::Value,
    /// Command-specific summary figures.
    pub summary: serde_json::Value,
}

/// Files of one command, kept in memory until every step has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn describe(&self) -> Vec<OutputFile> {
        self.files
            .iter()
            .map(|(n, b)| OutputFile {
                path: n.clone(),
                sha256: sha256_hex(b),
                bytes: b.len(),
            })
            .collect()
    }

    /// Writes every file, then the manifest, each through a temporary file
    /// renamed into place.
    pub fn commit(self, dir: &Path, manifest: &RunManifest) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            written.push(write_atomic(&dir.join(name), bytes)?);
        }
        let mut m = serde_json::to_vec_pretty(manifest)?;
        m.push(b'\n');
        written.push(write_atomic(&dir.join(MANIFEST_FILE), &m)?);
        Ok(written)
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn commit_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::default();
        out.add("a.txt", b"hello".to_vec());
        let m = RunManifest {
            command: "test".into(),
            artifact_version: "0".into(),
            config_digest: sha256_hex(b""),
            seed: 0,
            inputs: vec![],
            outputs: out.describe(),
            wall_clock_seconds: 0.0,
            parameters: serde_json::Value::Null,
            summary: serde_json::Value::Null,
        };
        out.commit(dir.path(), &m).unwrap();
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(names, vec!["a.txt", MANIFEST_FILE]);
    }
}
