//! Experiment configuration files.
//!
//! One TOML document drives every command. Unknown keys anywhere are an error.

use std::path::{Path, PathBuf};

use dinr::models::{Mode, ModelSpec};
use dinr::signal::{self, SignalDataset};
use dinr::theory::ntk::{DEFAULT_PROBE, DEFAULT_PROBE_CAP};
use dinr::{GridSignal, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Used when neither `--out` nor `DINR_OUT` is given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Grid shape of a synthetic signal.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub file: Option<FileSource>,
    /// Relative noise added to the training targets.
    #[serde(default)]
    pub noise_level: f64,
    /// Fraction of rows kept for training; the rest is the holdout.
    #[serde(default = "one")]
    pub keep_fraction: f64,
    /// Seed of the noise draw and the split.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

/// A raw grid on disk; relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub data: PathBuf,
    pub header: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "probe")]
    pub ntk_probe: usize,
    #[serde(default)]
    pub probe_seed: u64,
    #[serde(default = "top_k")]
    pub top_k: usize,
    #[serde(default = "cap")]
    pub probe_cap: usize,
}

fn probe() -> usize {
    DEFAULT_PROBE
}
fn top_k() -> usize {
    32
}
fn cap() -> usize {
    DEFAULT_PROBE_CAP
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { ntk_probe: probe(), probe_seed: 0, top_k: top_k(), probe_cap: cap() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default = "noise_levels")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "keep_fractions")]
    pub keep_fractions: Vec<f64>,
    #[serde(default = "ke_weights")]
    pub ke_weights: Vec<f64>,
    #[serde(default = "modes")]
    pub modes: Vec<Mode>,
    /// Repetitions; each seed reseeds the model, training and corruption.
    #[serde(default = "seeds")]
    pub seeds: Vec<u64>,
}

fn noise_levels() -> Vec<f64> {
    vec![0.0, 0.1, 0.3]
}
fn keep_fractions() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}
fn ke_weights() -> Vec<f64> {
    vec![0.0, 1.0]
}
fn modes() -> Vec<Mode> {
    vec![Mode::Static, Mode::Dynamical]
}
fn seeds() -> Vec<u64> {
    vec![0]
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            noise_levels: noise_levels(),
            keep_fractions: keep_fractions(),
            ke_weights: ke_weights(),
            modes: modes(),
            seeds: seeds(),
        }
    }
}

/// A parsed config plus the directory its relative paths are taken from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match (&d.synth, &d.file) {
            (Some(s), None) => {
                s.validate()?;
                let dims = d.dims.as_ref().ok_or_else(|| CliError::config("[data] synth needs dims"))?;
                if dims.is_empty() || dims.len() > 3 || dims.contains(&0) {
                    return Err(CliError::config(format!("[data] dims must have 1 to 3 positive entries, got {dims:?}")));
                }
                if dims.len() != self.model.in_dim {
                    return Err(CliError::config(format!(
                        "model in_dim {} does not match the {}-axis data grid",
                        self.model.in_dim,
                        dims.len()
                    )));
                }
            }
            (None, Some(_)) => {
                if d.dims.is_some() {
                    return Err(CliError::config("[data] dims come from the file header; remove dims"));
                }
            }
            _ => return Err(CliError::config("[data] needs exactly one of synth or file")),
        }
        if !(d.noise_level >= 0.0 && d.noise_level.is_finite()) {
            return Err(CliError::config("[data] noise_level must be finite and >= 0"));
        }
        if !(d.keep_fraction > 0.0 && d.keep_fraction <= 1.0) {
            return Err(CliError::config("[data] keep_fraction must lie in (0, 1]"));
        }
        self.model.validate()?;
        self.train.validate()?;
        let a = &self.analysis;
        if a.ntk_probe == 0 || a.top_k == 0 {
            return Err(CliError::config("[analysis] ntk_probe and top_k must be positive"));
        }
        let ab = &self.ablation;
        if ab.noise_levels.is_empty() && ab.keep_fractions.is_empty() {
            return Err(CliError::config("[ablation] needs noise levels or keep fractions"));
        }
        if ab.ke_weights.is_empty() || ab.modes.is_empty() || ab.seeds.is_empty() {
            return Err(CliError::config("[ablation] ke_weights, modes and seeds must be nonempty"));
        }
        if ab.noise_levels.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(CliError::config("[ablation] noise levels must be finite and >= 0"));
        }
        if ab.keep_fractions.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(CliError::config("[ablation] keep fractions must lie in (0, 1]"));
        }
        if ab.ke_weights.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(CliError::config("[ablation] ke weights must be finite and >= 0"));
        }
        Ok(())
    }

    /// Applies a `--seed` override to every seeded component.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.model.seed = s;
            self.train.seed = s;
            self.data.seed = s;
        }
        self
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

impl LoadedConfig {
    pub fn from_path(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
        let config = ExperimentConfig::parse(&text)?.with_seed(seed);
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The clean signal described by `[data]`.
    pub fn signal(&self) -> Result<GridSignal> {
        let d = &self.config.data;
        let grid = match (&d.synth, &d.file) {
            (Some(s), _) => signal::synth_signal(s, d.dims.as_deref().unwrap_or_default())?,
            (None, Some(f)) => signal::load_raw_grid(&self.resolve(&f.data), &self.resolve(&f.header))?,
            (None, None) => return Err(CliError::config("[data] needs synth or file")),
        };
        if grid.dims.len() != self.config.model.in_dim {
            return Err(CliError::config(format!(
                "model in_dim {} does not match the {}-axis data grid",
                self.config.model.in_dim,
                grid.dims.len()
            )));
        }
        Ok(grid)
    }
}

/// Training rows and holdout built from a clean dataset.
///
/// Noise corrupts only the training targets. The holdout is the clean
/// complement of the kept rows, or the whole clean grid when everything is
/// kept and the targets are noisy. `None` means no holdout exists.
pub fn corrupt(clean: &SignalDataset, noise_level: f64, keep_fraction: f64, seed: u64) -> Result<(SignalDataset, Option<SignalDataset>)> {
    let (kept, rest) = signal::subsample(clean, keep_fraction, seed)?;
    let train = signal::add_noise(&kept, noise_level, seed)?;
    let holdout = if !rest.is_empty() {
        Some(rest)
    } else if noise_level > 0.0 {
        Some(clean.clone())
    } else {
        None
    };
    Ok((train, holdout))
}
