use std::path::Path;

use dinr::signal::{grid_to_dataset, write_dataset_csv, write_raw_grid, NormalizeMode, ScalarType};

use crate::config::{corrupt, LoadedConfig};
use crate::error::Result;
use crate::manifest::{ManifestBuilder, RunManifest};

/// Writes the clean grid as `signal.bin` + `signal.toml` and the training
/// rows (after any configured corruption) as `dataset.csv`.
pub fn run(cfg: &LoadedConfig, out: &Path) -> Result<RunManifest> {
    let c = &cfg.config;
    let signal = cfg.signal()?;
    let mut manifest = ManifestBuilder::new("gen-data", c);
    let (data_path, header_path) = (out.join("signal.bin"), out.join("signal.toml"));
    write_raw_grid(&signal, &data_path, &header_path, ScalarType::F32, NormalizeMode::None)?;
    let clean = grid_to_dataset(&signal)?;
    let (train_set, _) = corrupt(&clean, c.data.noise_level, c.data.keep_fraction, c.data.seed)?;
    let csv = out.join("dataset.csv");
    write_dataset_csv(&train_set, &csv)?;
    manifest.metric("grid_points", signal.len() as f64);
    manifest.metric("train_rows", train_set.len() as f64);
    for p in [data_path, header_path, csv] {
        manifest.artifact(p);
    }
    manifest.write(out)
}
