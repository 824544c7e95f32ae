use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub model: u64,
    pub train: u64,
    pub data: u64,
}

/// Record of one command run, written as `manifest.json` next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub artifacts: Vec<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
    pub wall_time_seconds: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: config.hash(),
                seeds: Seeds { model: config.model.seed, train: config.train.seed, data: config.data.seed },
                artifacts: Vec::new(),
                metrics: BTreeMap::new(),
                wall_time_seconds: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.manifest.artifacts.push(path.into());
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.manifest.metrics.insert(name.to_string(), value);
    }

    /// Checks that every artifact exists, then writes `<dir>/manifest.json`.
    pub fn write(mut self, dir: &Path) -> Result<RunManifest> {
        if let Some(missing) = self.manifest.artifacts.iter().find(|p| !p.exists()) {
            return Err(CliError::MissingArtifact(missing.clone()));
        }
        self.manifest.wall_time_seconds = self.started.elapsed().as_secs_f64();
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}
