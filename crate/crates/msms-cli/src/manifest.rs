//! Run manifests: enough provenance in every output directory to re-run the
//! command bit-identically (command line, config and input hashes, seeds,
//! tool version, RNG scheme).

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub rng_scheme: String,
    pub timestamp_utc: String,
    pub inputs: Vec<InputHash>,
    pub seeds: Vec<(String, u64)>,
    pub threads: usize,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            rng_scheme: msms_core::rng::RNG_SCHEME.to_string(),
            timestamp_utc: chrono::Utc::now().to_rfc3339(),
            inputs: Vec::new(),
            seeds: Vec::new(),
            threads: 0,
        outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: hex(&hasher.finalize()),
        });
        Ok(())
    }

    pub fn add_seed(&mut self, name: &str, seed: u64) {
        self.seeds.push((name.to_string(), seed));
    }

    pub fn add_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e))?;
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
