//! Run manifests. Each stage writes `<stage>.manifest.json` next to its
//! outputs, recording a hash of the settings it used and of every input
//! file. A later run with the same hashes and all outputs present is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    /// Input path to SHA-256 (for directories, a hash over the sorted tree).
    pub inputs: BTreeMap<String, String>,
    /// Relative to the manifest's directory.
    pub outputs: Vec<PathBuf>,
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the canonical JSON form of `settings`.
pub fn config_hash<T: Serialize>(settings: &T) -> String {
    hash_bytes(&serde_json::to_vec(settings).expect("settings serialize"))
}

fn hash_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|_| CliError::MissingInput {
        path: path.into(),
        what: "input",
    })?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Hash of a file, or of a directory tree (relative paths and contents, in
/// sorted order, skipping manifests).
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_file() {
        return hash_file(path);
    }
    if !path.is_dir() {
        return Err(CliError::MissingInput {
            path: path.into(),
            what: "input",
        });
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| CliError::BadInput(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let p = entry.map_err(|e| CliError::BadInput(e.to_string()))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".manifest.json") {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
        h.update([0]);
        h.update(hash_file(&f)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

impl Manifest {
    pub fn new<T: Serialize>(stage: &str, settings: &T, inputs: &[&Path], outputs: Vec<PathBuf>) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), hash_path(p)?)))
            .collect::<Result<_>>()?;
        Ok(Manifest {
            stage: stage.into(),
            version: VERSION.into(),
            config_hash: config_hash(settings),
            inputs,
            outputs,
        })
    }

    pub fn path_in(dir: &Path, stage: &str) -> PathBuf {
        dir.join(format!("{stage}.manifest.json"))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        let path = Self::path_in(dir, &self.stage);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }

    pub fn read(dir: &Path, stage: &str) -> Option<Self> {
        let text = fs::read_to_string(Self::path_in(dir, stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// True when a previous run in `dir` used the same version, settings
    /// and inputs, and all of its outputs still exist.
    pub fn is_current(&self, dir: &Path) -> bool {
        match Self::read(dir, &self.stage) {
            Some(prev) => {
                prev.version == self.version
                    && prev.config_hash == self.config_hash
                    && prev.inputs == self.inputs
                    && prev.outputs == self.outputs
                    && prev.outputs.iter().all(|p| dir.join(p).exists())
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_sha256() {
        assert_eq!(
            hash_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn tree_hash_tracks_content_and_names() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a/b")).unwrap();
        fs::write(dir.path().join("a/b/x.txt"), "1").unwrap();
        fs::write(dir.path().join("y.txt"), "2").unwrap();
        let h1 = hash_path(dir.path()).unwrap();
        fs::write(dir.path().join("train.manifest.json"), "{}").unwrap();
        assert_eq!(hash_path(dir.path()).unwrap(), h1);
        fs::write(dir.path().join("y.txt"), "3").unwrap();
        let h2 = hash_path(dir.path()).unwrap();
        assert_ne!(h1, h2);
        fs::rename(dir.path().join("y.txt"), dir.path().join("z.txt")).unwrap();
        assert_ne!(hash_path(dir.path()).unwrap(), h2);
    }

    #[test]
    fn current_only_when_everything_matches() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let output = dir.path().join("out.txt");
        fs::write(&input, "data").unwrap();
        fs::write(&output, "result").unwrap();
        let m = Manifest::new("count", &("cfg", 1), &[&input], vec!["out.txt".into()]).unwrap();
        assert!(!m.is_current(dir.path()));
        m.write(dir.path()).unwrap();
        assert!(m.is_current(dir.path()));
        let other = Manifest::new("count", &("cfg", 2), &[&input], vec!["out.txt".into()]).unwrap();
        assert!(!other.is_current(dir.path()));
        fs::remove_file(&output).unwrap();
        assert!(!m.is_current(dir.path()));
    }
}
