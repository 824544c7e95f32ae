//! Empirical neural tangent kernels and spectrum statistics.

use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::GradientVector;
use crate::error::{Error, Result};
use crate::metrics::format_float;
use crate::models::{count_params, ForwardGraph, Model};
use crate::tensor::{gemm, Tensor};
use crate::theory::linalg::eigen_sym;

/// Default largest probe accepted by [`empirical_ntk`].
pub const DEFAULT_PROBE_CAP: usize = 1024;
/// Default number of probe coordinates.
pub const DEFAULT_PROBE: usize = 128;
/// Eigenvalues below this fraction of the largest are treated as numerically zero.
pub const RANK_FLOOR: f64 = 1e-12;

/// Gradient of the scalar output at one coordinate row.
pub fn output_gradient(model: &Model, x: &Tensor) -> Result<GradientVector> {
    if model.spec.out_dim != 1 {
        return Err(Error::invalid("output gradients need a scalar-output model"));
    }
    if x.rows() != 1 {
        return Err(Error::invalid("output_gradient takes a single coordinate row"));
    }
    let mut g = ForwardGraph::build(model, 1, None);
    g.run(model, x, None)?;
    g.tape.backward(g.output)
}

/// Per-sample parameter gradients of the scalar output, one row per coordinate.
pub fn output_jacobian(model: &Model, coords: &Tensor) -> Result<Tensor> {
    if model.spec.out_dim != 1 {
        return Err(Error::invalid("the empirical NTK needs a scalar-output model"));
    }
    let p = count_params(model);
    let rows: Vec<Result<Vec<f64>>> = (0..coords.rows())
        .into_par_iter()
        .map_init(
            || ForwardGraph::build(model, 1, None),
            |g, i| {
                let x = coords.select_rows(&[i]);
                g.run(model, &x, None)?;
                Ok(g.tape.backward(g.output)?.flatten())
            },
        )
        .collect();
    let mut data = Vec::with_capacity(coords.rows() * p);
    for r in rows {
        data.extend(r?);
    }
    Ok(Tensor::from_parts(vec![coords.rows(), p], data))
}

/// `K_ij = <d y(x_i)/d theta, d y(x_j)/d theta>` over the trainable parameters.
pub fn empirical_ntk(model: &Model, coords: &Tensor, cap: usize) -> Result<Tensor> {
    let n = coords.rows();
    if n < 2 {
        return Err(Error::invalid("the empirical NTK needs at least 2 probe coordinates"));
    }
    if n > cap {
        return Err(Error::invalid(format!(
            "probe of {n} coordinates exceeds the cap of {cap}; use a smaller probe"
        )));
    }
    let j = output_jacobian(model, coords)?;
    let p = j.cols();
    let mut k = vec![0.0; n * n];
    gemm(n, p, n, j.data(), false, j.data(), true, &mut k, 0.0);
    // mirror so the kernel is exactly symmetric
    for a in 0..n {
        for b in a + 1..n {
            k[b * n + a] = k[a * n + b];
        }
    }
    Ok(Tensor::from_parts(vec![n, n], k))
}

/// Spectral-entropy rank `exp(-sum p_i ln p_i)`, `p_i = lambda_i / sum lambda`.
pub fn effective_rank(eigs: &[f64]) -> Result<f64> {
    if eigs.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("effective rank needs finite nonnegative eigenvalues"));
    }
    let total: f64 = eigs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("effective rank of an all-zero spectrum"));
    }
    let h: f64 = eigs
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    Ok(h.exp())
}

/// `lambda_max / lambda_min+`, where `lambda_min+` is the smallest eigenvalue
/// at or above `floor_ratio * lambda_max`.
pub fn condition_number(eigs: &[f64], floor_ratio: f64) -> Result<f64> {
    if eigs.is_empty() {
        return Err(Error::invalid("condition number of an empty spectrum"));
    }
    let max = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::invalid("condition number needs a positive largest eigenvalue"));
    }
    let min = eigs.iter().copied().filter(|&v| v >= floor_ratio * max).fold(f64::INFINITY, f64::min);
    Ok(max / min)
}

/// Maximum-likelihood log-normal fit `(mean, population std)` of the logs of
/// the `top_k` largest eigenvalues.
pub fn lognormal_fit(eigs: &[f64], top_k: usize) -> Result<(f64, f64)> {
    if top_k == 0 || top_k > eigs.len() {
        return Err(Error::invalid(format!("lognormal fit of top {top_k} of {} eigenvalues", eigs.len())));
    }
    let mut sorted = eigs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let lead = &sorted[..top_k];
    if let Some(v) = lead.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::invalid(format!("lognormal fit over a nonpositive eigenvalue {v}")));
    }
    let logs: Vec<f64> = lead.iter().map(|v| v.ln()).collect();
    let mu = logs.iter().sum::<f64>() / top_k as f64;
    let var = logs.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / top_k as f64;
    Ok((mu, var.sqrt()))
}

/// Spectrum of one empirical NTK plus its summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkReport {
    /// Descending; round-off negatives are clamped to zero.
    pub eigenvalues: Vec<f64>,
    pub effective_rank: f64,
    /// Eigenvalues at or above the rank tolerance times `lambda_max`.
    pub numerical_rank: usize,
    pub condition_number: f64,
    pub lognormal_mu: f64,
    pub lognormal_sigma: f64,
    /// Number of leading eigenvalues entering the log-normal fit.
    pub fit_k: usize,
    pub probe_seed: u64,
    pub probe_count: usize,
}

/// Eigenvalues at or above `tol_ratio * lambda_max`.
pub fn numerical_rank_of(eigs: &[f64], tol_ratio: f64) -> usize {
    let max = eigs.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    eigs.iter().filter(|&&v| v >= tol_ratio * max).count()
}

/// Summary of a kernel's spectrum. `top_k` is capped by the number of
/// eigenvalues above the numerical floor.
pub fn spectrum_report(k: &Tensor, top_k: usize, rank_tol: f64, probe_seed: u64) -> Result<NtkReport> {
    let mut eig = eigen_sym(k)?;
    let max = eig.first().copied().unwrap_or(0.0);
    for v in eig.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let effective_rank = effective_rank(&eig)?;
    let condition_number = condition_number(&eig, RANK_FLOOR)?;
    let positive = eig.iter().filter(|&&v| v >= RANK_FLOOR * max && v > 0.0).count();
    let fit_k = top_k.min(positive).max(1);
    let (mu, sigma) = lognormal_fit(&eig, fit_k)?;
    Ok(NtkReport {
        numerical_rank: numerical_rank_of(&eig, rank_tol),
        eigenvalues: eig,
        effective_rank,
        condition_number,
        lognormal_mu: mu,
        lognormal_sigma: sigma,
        fit_k,
        probe_seed,
        probe_count: k.rows(),
    })
}

/// Empirical NTK of `model` on `coords` and its spectrum statistics.
pub fn ntk_report(model: &Model, coords: &Tensor, probe_seed: u64, top_k: usize, cap: usize) -> Result<NtkReport> {
    let k = empirical_ntk(model, coords, cap)?;
    spectrum_report(&k, top_k, crate::theory::RANK_TOL, probe_seed)
}

/// One CSV row of an NTK series.
#[derive(Debug, Clone)]
pub struct NtkRow {
    pub label: String,
    pub epoch: usize,
    pub report: NtkReport,
}

/// CSV with one row per report: label, epoch, probe size and seed, effective
/// rank, numerical rank, condition number, log-normal fit, then the leading
/// `top_k` eigenvalues (blank where a spectrum is shorter).
pub fn write_ntk_csv(path: &Path, rows: &[NtkRow], top_k: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "label",
        "epoch",
        "probe_count",
        "probe_seed",
        "effective_rank",
        "numerical_rank",
        "condition_number",
        "lognormal_mu",
        "lognormal_sigma",
        "fit_k",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..top_k).map(|i| format!("eig_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let p = &r.report;
        let mut rec = vec![
            r.label.clone(),
            r.epoch.to_string(),
            p.probe_count.to_string(),
            p.probe_seed.to_string(),
            format_float(p.effective_rank),
            p.numerical_rank.to_string(),
            format_float(p.condition_number),
            format_float(p.lognormal_mu),
            format_float(p.lognormal_sigma),
            p.fit_k.to_string(),
        ];
        rec.extend((0..top_k).map(|i| p.eigenvalues.get(i).map(|v| format_float(*v)).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Static versus dynamical kernel statistics at the given parameters.
#[derive(Debug, Clone)]
pub struct RankComparison {
    pub static_report: NtkReport,
    pub dynamical_report: NtkReport,
    pub static_params: usize,
    pub dynamical_params: usize,
}

impl RankComparison {
    pub fn dynamical_higher_effective(&self) -> bool {
        self.dynamical_report.effective_rank > self.static_report.effective_rank
    }

    pub fn dynamical_higher_numerical(&self) -> bool {
        self.dynamical_report.numerical_rank > self.static_report.numerical_rank
    }
}

/// Kernel ranks of a static/dynamical pair that share embedding and decoder
/// shapes and whose parameter counts agree within 10%.
pub fn ntk_rank_compare(static_model: &Model, dyn_model: &Model, coords: &Tensor, cap: usize) -> Result<RankComparison> {
    if coords.rows() < 8 {
        return Err(Error::invalid("rank comparison needs at least 8 probe coordinates"));
    }
    let (s, d) = (&static_model.spec, &dyn_model.spec);
    if s.is_dynamical() || !d.is_dynamical() {
        return Err(Error::invalid("rank comparison takes a static model then a dynamical one"));
    }
    if s.backbone != d.backbone || s.in_dim != d.in_dim || s.embed_dim != d.embed_dim || s.out_dim != d.out_dim {
        return Err(Error::invalid("models must share embedding and decoder shapes"));
    }
    let (ps, pd) = (count_params(static_model), count_params(dyn_model));
    let (lo, hi) = (ps.min(pd) as f64, ps.max(pd) as f64);
    if hi > 1.1 * lo {
        return Err(Error::invalid(format!("parameter counts {ps} and {pd} differ by more than 10%")));
    }
    let n = coords.rows();
    Ok(RankComparison {
        static_report: ntk_report(static_model, coords, 0, n, cap)?,
        dynamical_report: ntk_report(dyn_model, coords, 0, n, cap)?,
        static_params: ps,
        dynamical_params: pd,
    })
}
