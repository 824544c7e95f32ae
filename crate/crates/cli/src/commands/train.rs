use std::path::Path;

use dinr::models::{count_params, init_model, save_checkpoint};
use dinr::signal::grid_to_dataset;
use dinr::training::{self, evaluate};

use super::write_metrics_csv;
use crate::config::{corrupt, LoadedConfig};
use crate::error::{CliError, Result};
use crate::manifest::{ManifestBuilder, RunManifest};

/// Trains `[model]` on `[data]`, writing `model.toml`/`model.bin`,
/// `history.csv`, `metrics.csv` and the manifest. A divergence still writes the
/// partial history before failing.
pub fn run(cfg: &LoadedConfig, out: &Path) -> Result<RunManifest> {
    let c = &cfg.config;
    let signal = cfg.signal()?;
    let clean = grid_to_dataset(&signal)?;
    let (train_set, holdout) = corrupt(&clean, c.data.noise_level, c.data.keep_fraction, c.data.seed)?;
    let model = init_model(&c.model)?;
    let mut manifest = ManifestBuilder::new("train", c);
    manifest.metric("params", count_params(&model) as f64);
    let history_path = out.join("history.csv");

    let (fitted, history) = match training::train(&model, &train_set, &c.train, holdout.as_ref()) {
        Ok(r) => r,
        Err(failure) => {
            failure.history.write_csv(&history_path)?;
            if failure.source.is_divergence() {
                manifest.artifact(&history_path);
                manifest.metric("diverged", 1.0);
                manifest.write(out)?;
                return Err(CliError::Diverged(failure.source.to_string()));
            }
            return Err(failure.source.into());
        }
    };
    history.write_csv(&history_path)?;
    manifest.artifact(&history_path);

    let ckpt = out.join("model.toml");
    let bin = save_checkpoint(&fitted, &ckpt)?;
    manifest.artifact(&ckpt);
    manifest.artifact(bin);

    let mut rows = vec![("train".to_string(), evaluate(&fitted, &train_set)?)];
    if let Some(h) = &holdout {
        rows.push(("holdout".to_string(), evaluate(&fitted, h)?));
    }
    let metrics_path = out.join("metrics.csv");
    write_metrics_csv(&metrics_path, &rows)?;
    manifest.artifact(&metrics_path);

    if let Some(last) = history.last() {
        manifest.metric("data_loss", last.data_loss);
        manifest.metric("ke_loss", last.ke_loss);
        manifest.metric("total_loss", last.total_loss);
        if let Some(h) = last.holdout_mse {
            manifest.metric("holdout_mse", h);
        }
    }
    manifest.metric("steps", history.steps as f64);
    manifest.metric("train_mse", rows[0].1.mse);
    manifest.write(out)
}
