use std::path::{Path, PathBuf};

use dinr::models::{init_model, load_checkpoint, random_coords, Mode, ModelSpec};
use dinr::theory::ntk::{write_ntk_csv, NtkRow};
use dinr::theory::ntk_report;
use dinr::Model;

use super::checkpoint_label;
use crate::config::LoadedConfig;
use crate::error::{CliError, Result};
use crate::manifest::{ManifestBuilder, RunManifest};

/// NTK spectra of the given checkpoints, or of a freshly initialized
/// static/dynamical pair built from `[model]` when none are given.
pub fn run(cfg: &LoadedConfig, checkpoints: &[PathBuf], out: &Path) -> Result<RunManifest> {
    let c = &cfg.config;
    let a = &c.analysis;
    let models: Vec<(String, Model)> = if checkpoints.is_empty() {
        [Mode::Static, Mode::Dynamical]
            .into_iter()
            .map(|mode| {
                let spec = ModelSpec { mode, ..c.model.clone() };
                let label = format!("{}-init", if mode == Mode::Static { "static" } else { "dynamical" });
                Ok((label, init_model(&spec)?))
            })
            .collect::<Result<_>>()?
    } else {
        checkpoints
            .iter()
            .map(|p| {
                let m = load_checkpoint(p).map_err(|e| match e {
                    dinr::Error::Io(source) => CliError::Read { path: p.clone(), source },
                    other => other.into(),
                })?;
                Ok((checkpoint_label(p), m))
            })
            .collect::<Result<_>>()?
    };
    let mut manifest = ManifestBuilder::new("ntk", c);
    let mut rows = Vec::new();
    for (label, model) in models {
        let coords = random_coords(a.ntk_probe, model.spec.in_dim, a.probe_seed);
        let report = ntk_report(&model, &coords, a.probe_seed, a.top_k, a.probe_cap)?;
        manifest.metric(&format!("effective_rank_{label}"), report.effective_rank);
        rows.push(NtkRow { label, epoch: 0, report });
    }
    let path = out.join("ntk.csv");
    write_ntk_csv(&path, &rows, a.top_k)?;
    manifest.artifact(&path);
    manifest.write(out)
}
