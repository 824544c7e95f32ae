//! Fidelity metrics, error maps and power spectra.
//!
//! Spectra use the unnormalized forward DFT, so for an `r x c` grid Parseval
//! reads `sum(power) / (r * c) == sum(values^2)`.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft2, fftshift};
use crate::signal::{write_bytes, GridSignal, Provenance};
use crate::tensor::Tensor;

/// Fidelity of a reconstruction against its target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub mse: f64,
    /// `+inf` when the reconstruction is exact.
    pub psnr_db: f64,
    pub ssim: Option<f64>,
}

/// Renders a float for CSV output; infinities become `inf`/`-inf`.
pub fn format_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        v.to_string()
    }
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(format!("mse: shapes {:?} and {:?} differ", pred.shape(), target.shape())));
    }
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / pred.len() as f64)
}

/// `10 log10(peak^2 / mse)`; an exact fit returns `+inf`.
pub fn psnr(mse_val: f64, peak: f64) -> Result<f64> {
    if !(mse_val >= 0.0) {
        return Err(Error::invalid(format!("psnr: mse must be >= 0, got {mse_val}")));
    }
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("psnr: peak must be > 0, got {peak}")));
    }
    if mse_val == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse_val).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let mut w = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Single-scale SSIM of two `rows x cols` images, averaged over all fully
/// contained windows. Grids smaller than the window shrink it to the largest
/// odd size that fits.
pub fn ssim_2d(x: &[f64], y: &[f64], rows: usize, cols: usize, range: f64) -> Result<f64> {
    if x.len() != rows * cols || y.len() != rows * cols {
        return Err(Error::invalid("ssim: buffer sizes do not match dims"));
    }
    let mut size = SSIM_WINDOW.min(rows).min(cols);
    if size % 2 == 0 {
        size -= 1;
    }
    if size == 0 {
        return Err(Error::invalid("ssim: empty image"));
    }
    let w = gaussian_window(size, SSIM_SIGMA);
    let l = if range > 0.0 { range } else { 1.0 };
    let c1 = (K1 * l).powi(2);
    let c2 = (K2 * l).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=rows - size {
        for c0 in 0..=cols - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let wt = w[i * size + j];
                    let (a, b) = (x[(r0 + i) * cols + c0 + j], y[(r0 + i) * cols + c0 + j]);
                    mx += wt * a;
                    my += wt * b;
                    sxx += wt * a * a;
                    syy += wt * b * b;
                    sxy += wt * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM with dynamic range equal to the target's declared value range. Volumes
/// are scored slice by slice along the first axis and averaged.
pub fn ssim(pred: &GridSignal, target: &GridSignal) -> Result<f64> {
    if pred.dims != target.dims {
        return Err(Error::invalid(format!("ssim: dims {:?} and {:?} differ", pred.dims, target.dims)));
    }
    let range = target.value_range.1 - target.value_range.0;
    match pred.dims.as_slice() {
        &[r, c] => ssim_2d(pred.values.data(), target.values.data(), r, c, range),
        &[s, r, c] => {
            let plane = r * c;
            let mut acc = 0.0;
            for k in 0..s {
                let sl = k * plane..(k + 1) * plane;
                acc += ssim_2d(&pred.values.data()[sl.clone()], &target.values.data()[sl], r, c, range)?;
            }
            Ok(acc / s as f64)
        }
        d => Err(Error::Unsupported(format!("ssim needs a 2D or 3D grid, got {d:?}"))),
    }
}

/// Centered power spectrum and its radial profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRecord {
    /// `|DFT|^2`, DC moved to `(rows/2, cols/2)`.
    pub power: Tensor,
    /// `(ring, mean power)`, rings `0..min(rows, cols)/2`.
    pub radial: Vec<(usize, f64)>,
}

impl SpectrumRecord {
    /// Sum of the radial means over rings `>= from`.
    pub fn ring_energy(&self, from: usize) -> f64 {
        self.radial.iter().filter(|(k, _)| *k >= from).map(|(_, p)| p).sum()
    }
}

pub fn power_spectrum_2d(grid: &GridSignal) -> Result<SpectrumRecord> {
    let &[rows, cols] = grid.dims.as_slice() else {
        return Err(Error::invalid(format!("power spectrum needs a 2D grid, got {:?}", grid.dims)));
    };
    let input: Vec<Complex64> = grid.values.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let spec = fft2(&input, rows, cols, false)?;
    let power: Vec<f64> = fftshift(&spec.iter().map(|c| c.norm_sqr()).collect::<Vec<_>>(), rows, cols);
    let nrings = rows.min(cols) / 2;
    let mut sums = vec![0.0; nrings];
    let mut counts = vec![0usize; nrings];
    let (cr, cc) = ((rows / 2) as f64, (cols / 2) as f64);
    for r in 0..rows {
        for c in 0..cols {
            let rad = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt().round() as usize;
            if rad < nrings {
                sums[rad] += power[r * cols + c];
                counts[rad] += 1;
            }
        }
    }
    let radial = (0..nrings).map(|k| (k, if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 })).collect();
    Ok(SpectrumRecord { power: Tensor::from_parts(vec![rows, cols], power), radial })
}

/// Absolute error maps for several (prediction, target) pairs, scaled by one
/// shared maximum so maps within a group are directly comparable.
pub fn error_maps(pairs: &[(&GridSignal, &GridSignal)]) -> Result<Vec<GridSignal>> {
    let mut raw = Vec::with_capacity(pairs.len());
    for (p, t) in pairs {
        if p.dims != t.dims {
            return Err(Error::invalid(format!("error map: dims {:?} and {:?} differ", p.dims, t.dims)));
        }
        let v: Vec<f64> = p.values.data().iter().zip(t.values.data()).map(|(a, b)| (a - b).abs()).collect();
        raw.push((p.dims.clone(), v));
    }
    let max = raw.iter().flat_map(|(_, v)| v.iter()).fold(0.0f64, |m, &v| m.max(v));
    raw.into_iter()
        .map(|(dims, mut v)| {
            if max > 0.0 {
                v.iter_mut().for_each(|x| *x /= max);
            }
            GridSignal::from_values(&dims, v, Some((0.0, 1.0)), Provenance::Derived("error-map".into()))
        })
        .collect()
}

/// Error map of one pair normalized jointly with the other pairs of its group.
pub fn error_map(pred: &GridSignal, target: &GridSignal, norm_group: &[(&GridSignal, &GridSignal)]) -> Result<GridSignal> {
    let mut pairs = vec![(pred, target)];
    pairs.extend_from_slice(norm_group);
    Ok(error_maps(&pairs)?.swap_remove(0))
}

/// Binary 16-bit PGM (P5, big-endian samples) of values already in `[0, 1]`;
/// out-of-range values are clamped.
pub fn write_pgm16(path: &Path, rows: usize, cols: usize, unit_values: &[f64]) -> Result<()> {
    if unit_values.len() != rows * cols {
        return Err(Error::invalid("pgm: value count does not match dims"));
    }
    let mut bytes = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for &v in unit_values {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    write_bytes(path, &bytes)
}

/// Image plane of a grid: the grid itself when 2D, the middle slice along the
/// first axis when 3D.
pub fn display_plane(grid: &GridSignal) -> Result<(usize, usize, Vec<f64>)> {
    match grid.dims.as_slice() {
        &[r, c] => Ok((r, c, grid.values.data().to_vec())),
        &[s, r, c] => {
            let k = s / 2;
            Ok((r, c, grid.values.data()[k * r * c..(k + 1) * r * c].to_vec()))
        }
        d => Err(Error::Unsupported(format!("no image plane for dims {d:?}"))),
    }
}

/// Writes a grid as PGM, mapping its declared value range onto the gray scale.
pub fn write_grid_pgm(path: &Path, grid: &GridSignal) -> Result<()> {
    let (r, c, v) = display_plane(grid)?;
    let (lo, hi) = grid.value_range;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let unit: Vec<f64> = v.iter().map(|x| (x - lo) / span).collect();
    write_pgm16(path, r, c, &unit)
}

/// Writes a spectrum as PGM on the scale `log10(1 + p) / max log10(1 + p)`.
pub fn write_spectrum_pgm(path: &Path, spectrum: &SpectrumRecord) -> Result<()> {
    let (r, c) = (spectrum.power.rows(), spectrum.power.cols());
    let logp: Vec<f64> = spectrum.power.data().iter().map(|p| (1.0 + p).log10()).collect();
    let max = logp.iter().fold(0.0f64, |m, &v| m.max(v));
    let unit: Vec<f64> = logp.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
    write_pgm16(path, r, c, &unit)
}

/// Radial profile CSV with columns `ring, mean_power`.
pub fn write_radial_csv(path: &Path, spectrum: &SpectrumRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ring", "mean_power"])?;
    for (k, p) in &spectrum.radial {
        w.write_record([k.to_string(), format_float(*p)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: &[usize], v: Vec<f64>) -> GridSignal {
        GridSignal::from_values(dims, v, Some((-1.0, 1.0)), Provenance::Derived("t".into())).unwrap()
    }

    #[test]
    fn mse_cases() {
        let a = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert_eq!(mse(&b, &a).unwrap(), 1.0);
        assert!(mse(&a, &Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn psnr_table_values() {
        assert!((psnr(9.443e-4, 1.0).unwrap() - 30.248).abs() < 1e-3);
        // the table rounds its MSE, so this row lands at 33.0901
        assert!((psnr(4.909e-4, 1.0).unwrap() - 33.0901).abs() < 1e-4);
        assert_eq!(psnr(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(psnr(0.0, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(-1.0, 1.0).is_err());
        assert_eq!(format_float(f64::INFINITY), "inf");
    }

    #[test]
    fn ssim_identity_and_negation() {
        let v: Vec<f64> = (0..256).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let mean = v.iter().sum::<f64>() / 256.0;
        let v: Vec<f64> = v.iter().map(|x| x - mean).collect();
        let g = grid(&[16, 16], v.clone());
        assert_eq!(ssim(&g, &g).unwrap(), 1.0);
        let neg = grid(&[16, 16], v.iter().map(|x| -x).collect());
        // reference value from scikit-image (gaussian weights, population covariance)
        assert!((ssim(&neg, &g).unwrap() - 0.331_434_143_732_682).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_window_matches_formula() {
        // one 11x11 window; constant images have zero variance, so only the luminance term remains
        let a = grid(&[11, 11], vec![-1.0; 121]);
        let b = grid(&[11, 11], vec![1.0; 121]);
        let c1 = (0.01f64 * 2.0).powi(2);
        let expect = (2.0 * -1.0 * 1.0 + c1) / (1.0 + 1.0 + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn spectrum_constant_and_impulse() {
        let c = power_spectrum_2d(&grid(&[8, 8], vec![0.5; 64])).unwrap();
        assert_eq!(c.radial.len(), 4);
        assert!((c.power.get(4, 4) - 64.0f64.powi(2) * 0.25).abs() < 1e-9);
        assert!(c.radial[1..].iter().all(|(_, p)| p.abs() < 1e-18));

        let mut imp = vec![0.0; 64];
        imp[0] = 1.0;
        let s = power_spectrum_2d(&grid(&[8, 8], imp)).unwrap();
        assert!(s.power.data().iter().all(|p| (p - 1.0).abs() < 1e-12));
        assert!(power_spectrum_2d(&grid(&[8], vec![0.0; 8])).is_err());
    }

    #[test]
    fn error_maps_share_scale() {
        let t = grid(&[2, 2], vec![0.0; 4]);
        let p1 = grid(&[2, 2], vec![0.0, 2.0, 0.0, 0.0]);
        let p2 = grid(&[2, 2], vec![0.0, 0.0, 0.0, 4.0]);
        let m = error_maps(&[(&p1, &t), (&p2, &t)]).unwrap();
        assert_eq!(m[0].values.data(), &[0.0, 0.5, 0.0, 0.0]);
        assert_eq!(m[1].values.data(), &[0.0, 0.0, 0.0, 1.0]);
        let z = error_maps(&[(&t, &t)]).unwrap();
        assert!(z[0].values.data().iter().all(|&v| v == 0.0));
    }
}
