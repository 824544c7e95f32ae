//! Grid signals, coordinate datasets and their corruption protocols.
//!
//! Coordinates always live in `[-1, 1]` per axis, endpoints included. Grids are
//! stored row-major with the last axis fastest.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::fftn;
use crate::rng::{self, stream};
use crate::tensor::Tensor;

/// Where a grid came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic(SynthKind),
    File(PathBuf),
    /// Built in memory, e.g. a model reconstruction.
    Derived(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSignal {
    pub dims: Vec<usize>,
    /// Shape equals `dims`.
    pub values: Tensor,
    pub value_range: (f64, f64),
    pub provenance: Provenance,
}

impl GridSignal {
    /// Wraps row-major values; the value range is taken from the data unless given.
    pub fn from_values(dims: &[usize], values: Vec<f64>, value_range: Option<(f64, f64)>, provenance: Provenance) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::invalid(format!("grid must have 1 to 3 axes, got {dims:?}")));
        }
        let values = Tensor::new(dims.to_vec(), values)?;
        let range = value_range.unwrap_or_else(|| data_range(values.data()));
        Ok(GridSignal { dims: dims.to_vec(), values, value_range: range, provenance })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn data_range(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    SumOfSinusoids,
    SpectralNoiseField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    /// Cycles per domain along each axis.
    pub frequency: Vec<f64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub components: Vec<Component>,
    #[serde(default)]
    pub seed: u64,
    /// Power-law exponent of the noise field's spectrum, `P(k) ~ |k|^-slope`.
    #[serde(default = "default_slope")]
    pub spectral_slope: f64,
}

fn default_slope() -> f64 {
    2.0
}

impl SynthSpec {
    pub fn sinusoids(components: Vec<Component>) -> Self {
        SynthSpec { kind: SynthKind::SumOfSinusoids, components, seed: 0, spectral_slope: default_slope() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid("synthetic spec needs at least one component"));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.frequency.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
                return Err(Error::invalid(format!("component {i}: frequencies must be finite and nonnegative")));
            }
            if !c.amplitude.is_finite() || !c.phase.is_finite() {
                return Err(Error::invalid(format!("component {i}: non-finite amplitude or phase")));
            }
        }
        Ok(())
    }
}

/// Row-major lattice over `dims`, each axis mapped linearly onto `[-1, 1]`.
pub fn make_coord_grid(dims: &[usize]) -> Result<Tensor> {
    if dims.is_empty() {
        return Err(Error::invalid("coordinate grid needs at least one axis"));
    }
    if let Some(d) = dims.iter().find(|&&d| d < 2) {
        return Err(Error::invalid(format!("every grid axis needs at least 2 points, got {d}")));
    }
    let n: usize = dims.iter().product();
    let dx = dims.len();
    let mut data = Vec::with_capacity(n * dx);
    let mut idx = vec![0usize; dx];
    for _ in 0..n {
        for (a, &i) in idx.iter().enumerate() {
            data.push(axis_coord(i, dims[a]));
        }
        for a in (0..dx).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(Tensor::from_parts(vec![n, dx], data))
}

fn axis_coord(i: usize, n: usize) -> f64 {
    // exact endpoints and exact midpoint for odd n
    let two_i = 2 * i as i64 - (n as i64 - 1);
    two_i as f64 / (n - 1) as f64
}

/// Scales by the largest magnitude so values land in `[-1, 1]`; an all-zero
/// signal is left as is.
fn normalize_max_abs(values: &mut [f64]) {
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        values.iter_mut().for_each(|v| *v /= m);
    }
}

/// Synthesizes a signal on `dims` and scales it into `[-1, 1]`.
pub fn synth_signal(spec: &SynthSpec, dims: &[usize]) -> Result<GridSignal> {
    spec.validate()?;
    let coords = make_coord_grid(dims)?;
    let mut values = match spec.kind {
        SynthKind::SumOfSinusoids => {
            let d = dims.len();
            for (i, c) in spec.components.iter().enumerate() {
                if c.frequency.len() != d {
                    return Err(Error::invalid(format!(
                        "component {i} has {} frequencies for a {d}-axis grid",
                        c.frequency.len()
                    )));
                }
            }
            (0..coords.rows())
                .map(|r| {
                    let x = coords.row(r);
                    spec.components
                        .iter()
                        .map(|c| {
                            let dot: f64 = c.frequency.iter().zip(x).map(|(f, x)| f * x).sum();
                            c.amplitude * (PI * dot + c.phase).sin()
                        })
                        .sum()
                })
                .collect()
        }
        SynthKind::SpectralNoiseField => spectral_noise(spec, dims)?,
    };
    normalize_max_abs(&mut values);
    GridSignal::from_values(dims, values, Some((-1.0, 1.0)), Provenance::Synthetic(spec.kind))
}

/// Seeded complex Gaussian spectrum with power `|k|^-slope`, band-limited at
/// the largest component frequency norm, inverse transformed (real part kept).
fn spectral_noise(spec: &SynthSpec, dims: &[usize]) -> Result<Vec<f64>> {
    let kmax = spec
        .components
        .iter()
        .map(|c| c.frequency.iter().map(|f| f * f).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let n: usize = dims.iter().product();
    let mut rng = rng::seeded(spec.seed, stream::SYNTH);
    let mut coef = Vec::with_capacity(n);
    let mut idx = vec![0usize; dims.len()];
    for _ in 0..n {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let k2: f64 = idx
            .iter()
            .zip(dims)
            .map(|(&i, &d)| {
                let k = if i <= d / 2 { i as f64 } else { i as f64 - d as f64 };
                k * k
            })
            .sum();
        let k = k2.sqrt();
        let amp = if k == 0.0 || k > kmax { 0.0 } else { k.powf(-spec.spectral_slope / 2.0) };
        coef.push(Complex64::new(re * amp, im * amp));
        for a in (0..dims.len()).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(fftn(&coef, dims, true)?.into_iter().map(|c| c.re).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    F32,
    F64,
}

impl ScalarType {
    pub fn width(self) -> usize {
        match self {
            ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }
}

/// Target range applied when a raw grid is loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// Min-max to `[0, 1]`.
    Unit,
    /// Min-max to `[-1, 1]`.
    Symmetric,
    None,
}

/// Sidecar header of a raw little-endian grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGridHeader {
    pub dims: Vec<usize>,
    pub dtype: ScalarType,
    pub normalize: NormalizeMode,
}

/// Min-max normalization into the mode's range. A constant signal maps to
/// the lower bound (with a warning).
pub fn normalize(values: &mut [f64], mode: NormalizeMode) -> (f64, f64) {
    let (lo, hi) = match mode {
        NormalizeMode::Unit => (0.0, 1.0),
        NormalizeMode::Symmetric => (-1.0, 1.0),
        NormalizeMode::None => return data_range(values),
    };
    let (min, max) = data_range(values);
    let span = max - min;
    if !(span > 0.0) {
        log::warn!("constant signal; min-max normalization maps every value to {lo}");
        values.iter_mut().for_each(|v| *v = lo);
        return (lo, hi);
    }
    for v in values.iter_mut() {
        let u = (*v - min) / span;
        *v = lo + u * (hi - lo);
    }
    (lo, hi)
}

/// Reads a raw grid and applies the header's normalization.
pub fn load_raw_grid(data_path: &Path, header_path: &Path) -> Result<GridSignal> {
    let header: RawGridHeader = toml::from_str(&fs::read_to_string(header_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", header_path.display())))?;
    if header.dims.is_empty() || header.dims.len() > 3 || header.dims.contains(&0) {
        return Err(Error::Format(format!("{}: bad dims {:?}", header_path.display(), header.dims)));
    }
    let bytes = fs::read(data_path)?;
    let n: usize = header.dims.iter().product();
    let expected = (n * header.dtype.width()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { path: data_path.to_path_buf(), expected, actual: bytes.len() as u64 });
    }
    let mut values: Vec<f64> = match header.dtype {
        ScalarType::F32 => bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
        ScalarType::F64 => bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} element {i}", data_path.display())));
    }
    let range = normalize(&mut values, header.normalize);
    GridSignal::from_values(&header.dims, values, Some(range), Provenance::File(data_path.to_path_buf()))
}

/// Writes a grid as a little-endian scalar stream plus TOML header.
pub fn write_raw_grid(signal: &GridSignal, data_path: &Path, header_path: &Path, dtype: ScalarType, normalize: NormalizeMode) -> Result<()> {
    let mut bytes = Vec::with_capacity(signal.len() * dtype.width());
    for &v in signal.values.data() {
        match dtype {
            ScalarType::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            ScalarType::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    fs::write(data_path, bytes)?;
    let header = RawGridHeader { dims: signal.dims.clone(), dtype, normalize };
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(header_path, text)?;
    Ok(())
}

/// Coordinate/value pairs sampled from a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDataset {
    /// `n x d_x`, entries in `[-1, 1]`.
    pub coords: Tensor,
    /// `n x d_y`.
    pub targets: Tensor,
    pub noise_level: f64,
    pub keep_fraction: f64,
    /// Row-major grid index of each row.
    pub indices: Vec<usize>,
    /// Source grid dims, when rows can be placed back on a full grid.
    pub grid_dims: Option<Vec<usize>>,
    pub value_range: (f64, f64),
}

impl SignalDataset {
    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the rows are exactly the full source grid in row-major order.
    pub fn is_full_grid(&self) -> bool {
        match &self.grid_dims {
            Some(d) => d.iter().product::<usize>() == self.len() && self.indices.iter().enumerate().all(|(i, &j)| i == j),
            None => false,
        }
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> SignalDataset {
        SignalDataset {
            coords: self.coords.select_rows(rows),
            targets: self.targets.select_rows(rows),
            noise_level: self.noise_level,
            keep_fraction: self.keep_fraction,
            indices: rows.iter().map(|&r| self.indices[r]).collect(),
            grid_dims: self.grid_dims.clone(),
            value_range: self.value_range,
        }
    }
}

pub fn grid_to_dataset(signal: &GridSignal) -> Result<SignalDataset> {
    let coords = make_coord_grid(&signal.dims)?;
    let n = signal.len();
    Ok(SignalDataset {
        coords,
        targets: Tensor::from_parts(vec![n, 1], signal.values.data().to_vec()),
        noise_level: 0.0,
        keep_fraction: 1.0,
        indices: (0..n).collect(),
        grid_dims: Some(signal.dims.clone()),
        value_range: signal.value_range,
    })
}

/// Places per-row scalar values back on the dataset's grid.
pub fn dataset_values_to_grid(dataset: &SignalDataset, values: &Tensor) -> Result<GridSignal> {
    let dims = dataset
        .grid_dims
        .as_ref()
        .ok_or_else(|| Error::invalid("dataset has no grid layout"))?;
    if !dataset.is_full_grid() {
        return Err(Error::invalid("dataset does not cover its full grid"));
    }
    if values.rows() != dataset.len() || values.cols() != 1 {
        return Err(Error::invalid(format!("expected {} x 1 values, got {:?}", dataset.len(), values.shape())));
    }
    let mut grid = vec![0.0; values.rows()];
    for (r, &i) in dataset.indices.iter().enumerate() {
        grid[i] = values.data()[r];
    }
    GridSignal::from_values(dims, grid, Some(dataset.value_range), Provenance::Derived("dataset".into()))
}

/// Reassembles the dataset's targets onto its grid.
pub fn dataset_to_grid(dataset: &SignalDataset) -> Result<GridSignal> {
    dataset_values_to_grid(dataset, &dataset.targets)
}

fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Additive i.i.d. Gaussian noise with standard deviation `level * std(targets)`.
pub fn add_noise(dataset: &SignalDataset, level: f64, seed: u64) -> Result<SignalDataset> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::invalid(format!("noise level must be finite and >= 0, got {level}")));
    }
    let mut out = dataset.clone();
    out.noise_level = level;
    if level == 0.0 {
        return Ok(out);
    }
    let sigma = level * population_std(dataset.targets.data());
    let mut rng = rng::seeded(seed, stream::NOISE);
    for v in out.targets.data_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * e;
    }
    Ok(out)
}

/// Seeded split: `ceil(fraction * n)` rows for training, the rest held out.
/// Both parts keep ascending grid order.
pub fn subsample(dataset: &SignalDataset, fraction: f64, seed: u64) -> Result<(SignalDataset, SignalDataset)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("keep fraction must lie in (0, 1], got {fraction}")));
    }
    let n = dataset.len();
    let k = ((fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed, stream::SPLIT));
    let mut train: Vec<usize> = order[..k].to_vec();
    let mut hold: Vec<usize> = order[k..].to_vec();
    train.sort_unstable();
    hold.sort_unstable();
    let mut t = dataset.select(&train);
    let mut h = dataset.select(&hold);
    t.keep_fraction = fraction;
    h.keep_fraction = fraction;
    Ok((t, h))
}

/// CSV export: `x0..x{d-1}, y0..y{m-1}` with shortest round-trip float text.
pub fn write_dataset_csv(dataset: &SignalDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dx = dataset.coords.cols();
    let dy = dataset.targets.cols();
    let header: Vec<String> = (0..dx).map(|i| format!("x{i}")).chain((0..dy).map(|i| format!("y{i}"))).collect();
    w.write_record(&header)?;
    for r in 0..dataset.len() {
        let rec: Vec<String> = dataset.coords.row(r).iter().chain(dataset.targets.row(r)).map(|v| v.to_string()).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes raw bytes, creating parent directories.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            fs::create_dir_all(p)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
