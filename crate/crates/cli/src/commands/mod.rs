mod ablate;
mod bounds;
mod data;
mod eval;
mod ntk;
mod train;

use std::path::{Path, PathBuf};

use dinr::metrics::{format_float, MetricRecord};

pub use ablate::run as ablate;
pub use bounds::run as bounds;
pub use data::run as gen_data;
pub use eval::run as eval;
pub use ntk::run as ntk;
pub use train::run as train;

use crate::error::Result;

pub fn prepare_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

/// Label of a checkpoint: its file stem.
pub fn checkpoint_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into())
}

pub fn write_metrics_csv(path: &Path, rows: &[(String, MetricRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(dinr::Error::from)?;
    w.write_record(["label", "mse", "psnr_db", "ssim"]).map_err(dinr::Error::from)?;
    for (label, m) in rows {
        let ssim = m.ssim.map(format_float).unwrap_or_default();
        w.write_record([label.clone(), format_float(m.mse), format_float(m.psnr_db), ssim]).map_err(dinr::Error::from)?;
    }
    w.flush()?;
    Ok(())
}
