use std::path::Path;

use dinr::metrics::format_float;
use dinr::models::{count_params, init_model, Mode, ModelSpec};
use dinr::signal::{grid_to_dataset, SignalDataset};
use dinr::training::{evaluate_mse, train};
use dinr::TrainConfig;
use rayon::prelude::*;

use crate::config::{corrupt, LoadedConfig};
use crate::error::Result;
use crate::manifest::{ManifestBuilder, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Task {
    Noise,
    Keep,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    task: Task,
    noise_level: f64,
    keep_fraction: f64,
    ke_weight: f64,
    mode: Mode,
    seed: u64,
}

#[derive(Debug, Clone)]
enum Outcome {
    Done { mse: f64, holdout_is_train: bool, train_mse: f64, params: usize },
    Diverged,
}

fn cells(cfg: &LoadedConfig) -> Vec<Cell> {
    let ab = &cfg.config.ablation;
    let mut out = Vec::new();
    let axes = ab.noise_levels.iter().map(|&v| (Task::Noise, v, 1.0)).chain(ab.keep_fractions.iter().map(|&k| (Task::Keep, 0.0, k)));
    for (task, noise_level, keep_fraction) in axes {
        for &mode in &ab.modes {
            for &ke_weight in &ab.ke_weights {
                for &seed in &ab.seeds {
                    out.push(Cell { task, noise_level, keep_fraction, ke_weight, mode, seed });
                }
            }
        }
    }
    out
}

fn run_cell(cfg: &LoadedConfig, clean: &SignalDataset, cell: &Cell) -> Result<Outcome> {
    let c = &cfg.config;
    let (train_set, holdout) = corrupt(clean, cell.noise_level, cell.keep_fraction, cell.seed)?;
    let model = init_model(&ModelSpec { mode: cell.mode, seed: cell.seed, ..c.model.clone() })?;
    let tc = TrainConfig { ke_weight: cell.ke_weight, seed: cell.seed, ..c.train.clone() };
    match train(&model, &train_set, &tc, None) {
        Ok((fitted, _)) => {
            let train_mse = evaluate_mse(&fitted, &train_set)?;
            let (mse, holdout_is_train) = match &holdout {
                Some(h) => (evaluate_mse(&fitted, h)?, false),
                None => (train_mse, true),
            };
            Ok(Outcome::Done { mse, holdout_is_train, train_mse, params: count_params(&fitted) })
        }
        Err(f) if f.source.is_divergence() => {
            log::warn!("cell {cell:?} diverged: {}", f.source);
            Ok(Outcome::Diverged)
        }
        Err(f) => Err(f.source.into()),
    }
}

/// Noise-level and keep-fraction sweeps over modes, KE weights and seeds,
/// one CSV row per cell. Cells run in parallel; rows keep the sweep order.
pub fn run(cfg: &LoadedConfig, out: &Path) -> Result<RunManifest> {
    let c = &cfg.config;
    let clean = grid_to_dataset(&cfg.signal()?)?;
    let cells = cells(cfg);
    let outcomes: Vec<Result<Outcome>> = cells.par_iter().map(|cell| run_cell(cfg, &clean, cell)).collect();

    let path = out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(dinr::Error::from)?;
    w.write_record(["task", "noise_level", "keep_fraction", "ke_weight", "mode", "seed", "status", "holdout_mse", "holdout_is_train", "train_mse", "params"])
        .map_err(dinr::Error::from)?;
    let mut manifest = ManifestBuilder::new("ablate", c);
    let mut diverged = 0usize;
    for (cell, outcome) in cells.iter().zip(outcomes) {
        let task = if cell.task == Task::Noise { "noise" } else { "keep" };
        let mode = if cell.mode == Mode::Static { "static" } else { "dynamical" };
        let mut rec = vec![
            task.to_string(),
            format_float(cell.noise_level),
            format_float(cell.keep_fraction),
            format_float(cell.ke_weight),
            mode.to_string(),
            cell.seed.to_string(),
        ];
        match outcome? {
            Outcome::Done { mse, holdout_is_train, train_mse, params } => {
                rec.extend(["ok".into(), format_float(mse), holdout_is_train.to_string(), format_float(train_mse), params.to_string()]);
            }
            Outcome::Diverged => {
                diverged += 1;
                rec.extend(["diverged".into(), String::new(), String::new(), String::new(), String::new()]);
            }
        }
        w.write_record(&rec).map_err(dinr::Error::from)?;
    }
    w.flush()?;
    manifest.artifact(&path);
    manifest.metric("cells", cells.len() as f64);
    manifest.metric("diverged_cells", diverged as f64);
    manifest.write(out)
}
