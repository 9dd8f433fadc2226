//! Run manifests: a small JSON sidecar written next to every CLI
//! artifact, recording what produced it and a digest of the resolved
//! configuration so reruns can be audited byte-for-byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lowercase hex SHA-256 of a canonical text.
pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// The subcommand that produced the artifacts.
    pub command: String,
    /// SHA-256 of the canonical resolved configuration text.
    pub config_digest: String,
    /// The seed the run actually used, after flag/env/config resolution.
    pub seed: u64,
    /// Crate version that wrote the artifacts.
    pub artifact_version: String,
    /// The artifact files, as given on the command line.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, canonical_config: &str, seed: u64, outputs: &[&Path]) -> Self {
        Self {
            command: command.to_string(),
            config_digest: sha256_hex(canonical_config),
            seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: outputs
                .iter()
                .map(|p| p.to_string_lossy().into_owned())
                .collect(),
        }
    }

    /// Where the sidecar for `output` lives: `<output>.manifest.json`.
    pub fn manifest_path(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_os_string();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Serialize next to the primary artifact; returns the sidecar path.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        self.validate()?;
        let path = Self::manifest_path(output);
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        fs::write(&path, body)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.command.is_empty() {
            return Err(Error::InvalidInput("manifest command is empty".into()));
        }
        if self.config_digest.len() != 64
            || !self.config_digest.bytes().all(|b| b.is_ascii_hexdigit())
        {
            return Err(Error::InvalidInput(format!(
                "config digest {:?} is not 64 hex characters",
                self.config_digest
            )));
        }
        if self.outputs.is_empty() {
            return Err(Error::InvalidInput("manifest lists no outputs".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_a_known_vector() {
        // sha256("abc"), the classic test vector
        assert_eq!(
            sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(sha256_hex(""), sha256_hex(""));
        assert_ne!(sha256_hex("a"), sha256_hex("b"));
    }

    #[test]
    fn sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("trace.csv");
        let m = RunManifest::new("train", "kind=fkl\n", 7, &[&out]);
        let side = m.write_beside(&out).unwrap();
        assert_eq!(side, dir.path().join("trace.csv.manifest.json"));
        let back = RunManifest::load(&side).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.seed, 7);
        assert_eq!(back.config_digest, sha256_hex("kind=fkl\n"));
        assert_eq!(back.artifact_version, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn validation_rejects_corrupt_manifests() {
        let ok = RunManifest::new("toy", "x", 0, &[Path::new("p.csv")]);
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.config_digest = "zz".into();
        assert!(bad.validate().is_err());
        let mut empty = ok.clone();
        empty.outputs.clear();
        assert!(empty.validate().is_err());
        let mut anon = ok;
        anon.command.clear();
        assert!(anon.validate().is_err());
    }
}
