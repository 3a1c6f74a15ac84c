use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Record of one command's outputs, written next to them as
/// `manifest_<command>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub version: String,
    /// Resolved configuration the command ran with.
    pub config: serde_json::Value,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Hex SHA-256 of a file's contents and its size.
pub fn file_sha256(path: &Path) -> Result<(String, u64)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let k = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
        total += k as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

impl Manifest {
    /// Hashes `files`, which must lie under `dir`.
    pub fn build(command: &str, seed: u64, config: serde_json::Value, dir: &Path, files: &[PathBuf]) -> Result<Self> {
        let mut entries = Vec::with_capacity(files.len());
        for f in files {
            let rel = f
                .strip_prefix(dir)
                .map_err(|_| Error::Data(format!("{} is outside {}", f.display(), dir.display())))?;
            let (sha256, bytes) = file_sha256(f)?;
            entries.push(ManifestEntry { path: rel.to_string_lossy().replace('\\', "/"), sha256, bytes });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Self { command: command.to_string(), seed, version: env!("CARGO_PKG_VERSION").to_string(), config, files: entries })
    }

    pub fn file_name(command: &str) -> String {
        format!("manifest_{command}.json")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.command));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Recomputes every hash under `dir`; errors on the first mismatch.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for e in &self.files {
            let path = dir.join(&e.path);
            let (sha, bytes) = file_sha256(&path)?;
            if sha != e.sha256 || bytes != e.bytes {
                return Err(Error::Data(format!("{} does not match its manifest hash", path.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_known_content_and_detects_edits() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, "abc").unwrap();
        let m = Manifest::build("synth", 7, serde_json::json!({}), dir.path(), &[f.clone()]).unwrap();
        assert_eq!(m.files[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(m.files[0].path, "a.txt");
        let back = Manifest::read(&m.write(dir.path()).unwrap()).unwrap();
        assert_eq!(back, m);
        back.verify(dir.path()).unwrap();
        std::fs::write(&f, "abd").unwrap();
        assert!(back.verify(dir.path()).is_err());
    }
}
