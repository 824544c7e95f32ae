use std::path::{Path, PathBuf};

use dinr::metrics::{self, display_plane, error_maps, power_spectrum_2d, write_grid_pgm, write_radial_csv, write_spectrum_pgm};
use dinr::models::load_checkpoint;
use dinr::signal::{dataset_values_to_grid, grid_to_dataset, Provenance};
use dinr::training::{evaluate_predictions, predict};
use dinr::GridSignal;

use super::{checkpoint_label, write_metrics_csv};
use crate::config::LoadedConfig;
use crate::error::{CliError, Result};
use crate::manifest::{ManifestBuilder, RunManifest};

/// Image plane of a 2D or 3D grid as its own 2D grid; `None` for 1D data.
fn plane(grid: &GridSignal) -> Result<Option<GridSignal>> {
    if grid.dims.len() < 2 {
        return Ok(None);
    }
    let (r, c, v) = display_plane(grid)?;
    Ok(Some(GridSignal::from_values(&[r, c], v, Some(grid.value_range), grid.provenance.clone())?))
}

fn write_spectrum(grid: &GridSignal, stem: &str, out: &Path, manifest: &mut ManifestBuilder) -> Result<()> {
    if let Some(p) = plane(grid)? {
        let spec = power_spectrum_2d(&p)?;
        let (pgm, csv) = (out.join(format!("spectrum_{stem}.pgm")), out.join(format!("radial_{stem}.csv")));
        write_spectrum_pgm(&pgm, &spec)?;
        write_radial_csv(&csv, &spec)?;
        manifest.artifact(pgm);
        manifest.artifact(csv);
    }
    Ok(())
}

/// Scores each checkpoint on the clean `[data]` grid. Error maps of all
/// checkpoints share one normalization constant.
pub fn run(cfg: &LoadedConfig, checkpoints: &[PathBuf], out: &Path) -> Result<RunManifest> {
    if checkpoints.is_empty() {
        return Err(CliError::config("eval needs at least one --checkpoint"));
    }
    let c = &cfg.config;
    let target = cfg.signal()?;
    let data = grid_to_dataset(&target)?;
    let mut manifest = ManifestBuilder::new("eval", c);
    let mut rows = Vec::new();
    let mut preds = Vec::new();
    for path in checkpoints {
        let model = load_checkpoint(path).map_err(|e| match e {
            dinr::Error::Io(source) => CliError::Read { path: path.clone(), source },
            other => other.into(),
        })?;
        if model.spec.in_dim != target.dims.len() || model.spec.out_dim != 1 {
            return Err(CliError::config(format!(
                "{}: model maps {} -> {} values but the data grid has {} axes and scalar values",
                path.display(),
                model.spec.in_dim,
                model.spec.out_dim,
                target.dims.len()
            )));
        }
        let pred = predict(&model, &data.coords)?;
        let label = checkpoint_label(path);
        rows.push((label.clone(), evaluate_predictions(&pred, &data)?));
        let mut grid = dataset_values_to_grid(&data, &pred)?;
        grid.value_range = target.value_range;
        grid.provenance = Provenance::Derived(label);
        preds.push(grid);
    }

    let metrics_path = out.join("metrics.csv");
    write_metrics_csv(&metrics_path, &rows)?;
    manifest.artifact(&metrics_path);
    for (label, m) in &rows {
        manifest.metric(&format!("mse_{label}"), m.mse);
    }

    write_spectrum(&target, "target", out, &mut manifest)?;
    let pairs: Vec<(&GridSignal, &GridSignal)> = preds.iter().map(|p| (p, &target)).collect();
    let errors = error_maps(&pairs)?;
    for (i, (pred, err)) in preds.iter().zip(&errors).enumerate() {
        let stem = i.to_string();
        write_spectrum(pred, &stem, out, &mut manifest)?;
        if target.dims.len() >= 2 {
            let (recon, emap) = (out.join(format!("recon_{stem}.pgm")), out.join(format!("error_{stem}.pgm")));
            write_grid_pgm(&recon, pred)?;
            write_grid_pgm(&emap, err)?;
            manifest.artifact(recon);
            manifest.artifact(emap);
        }
    }
    if target.dims.len() >= 2 {
        let t = out.join("target.pgm");
        metrics::write_grid_pgm(&t, &target)?;
        manifest.artifact(t);
    }
    manifest.write(out)
}
