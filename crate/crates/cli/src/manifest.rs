use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of one artifact-producing command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// The effective configuration, as TOML.
    pub config: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub toolkit_version: String,
    pub duration_s: f64,
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, args: Vec<String>, config: String, config_hash: String, seeds: BTreeMap<String, u64>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                args,
                config,
                config_hash,
                seeds,
                inputs: Vec::new(),
                outputs: Vec::new(),
                toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
                duration_s: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    /// Writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<RunManifest> {
        self.manifest.duration_s = self.started.elapsed().as_secs_f64();
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}
