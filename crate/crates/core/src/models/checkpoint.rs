//! Checkpoint files.
//!
//! A checkpoint is a TOML header (`format_version`, the full spec, the data
//! file name and the block table) plus a data file holding every block,
//! frozen ones included, as little-endian `f32` in block order, each block
//! row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec, ParamBlock};
use crate::signal::write_bytes;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    data_file: String,
    spec: ModelSpec,
    blocks: Vec<BlockEntry>,
}

fn data_path(header_path: &Path) -> PathBuf {
    let mut name = header_path.file_stem().unwrap_or_default().to_os_string();
    name.push(".bin");
    header_path.with_file_name(name)
}

/// Writes `header_path` and a sibling `<stem>.bin`; returns the data file path.
pub fn save_checkpoint(model: &Model, header_path: &Path) -> Result<PathBuf> {
    let data = data_path(header_path);
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        data_file: data.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        spec: model.spec.clone(),
        blocks: model
            .blocks()
            .iter()
            .map(|b| BlockEntry { name: b.name.clone(), shape: b.tensor.shape().to_vec(), trainable: b.trainable })
            .collect(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut bytes = Vec::new();
    for b in model.blocks() {
        for &v in b.tensor.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_bytes(header_path, text.as_bytes())?;
    write_bytes(&data, &bytes)?;
    Ok(data)
}

pub fn load_checkpoint(header_path: &Path) -> Result<Model> {
    let text = fs::read_to_string(header_path)?;
    let header: Header = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", header_path.display())))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} (supported: {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    let data = header_path.with_file_name(&header.data_file);
    let bytes = fs::read(&data)?;
    let total: usize = header.blocks.iter().map(|b| b.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(Error::SizeMismatch { path: data, expected: (total * 4) as u64, actual: bytes.len() as u64 });
    }
    let mut offset = 0;
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for b in header.blocks {
        let n: usize = b.shape.iter().product();
        let vals: Vec<f64> = bytes[offset * 4..(offset + n) * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        offset += n;
        blocks.push(ParamBlock { name: b.name, tensor: Tensor::new(b.shape, vals)?, trainable: b.trainable });
    }
    Model::from_blocks(header.spec, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, Backbone, Mode};

    #[test]
    fn roundtrip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec { backbone: Backbone::Ffnet, mode: Mode::Dynamical, embed_dim: 8, hidden_width: 6, depth: 2, ..ModelSpec::default() };
        let m = init_model(&spec).unwrap();
        let path = dir.path().join("model.toml");
        let data = save_checkpoint(&m, &path).unwrap();
        assert!(data.ends_with("model.bin"));
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.spec, m.spec);
        for (a, b) in m.blocks().iter().zip(back.blocks()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn truncated_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = init_model(&ModelSpec { embed_dim: 4, hidden_width: 4, depth: 1, ..ModelSpec::default() }).unwrap();
        let path = dir.path().join("m.toml");
        let data = save_checkpoint(&m, &path).unwrap();
        let bytes = fs::read(&data).unwrap();
        fs::write(&data, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::SizeMismatch { .. })));
    }
}
