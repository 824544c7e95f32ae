//! The scalar Riccati flow `dz/dt = z^2`, `z(0) = x`, whose solution
//! `x / (1 - t x)` expands into `x + t x^2 + t^2 x^3 + ...`.

use crate::error::{Error, Result};
use crate::models::{integrate, Solver};
use crate::tensor::Tensor;

pub fn riccati_reference(x0: f64, t: f64) -> Result<f64> {
    if t * x0 >= 1.0 {
        return Err(Error::invalid(format!("Riccati solution blows up before t = {t} for x0 = {x0}")));
    }
    Ok(x0 / (1.0 - t * x0))
}

/// `z(T)` from `N` fixed steps of `solver`.
pub fn riccati_numeric(x0: f64, horizon: f64, steps: usize, solver: Solver) -> Result<f64> {
    let traj = integrate(Tensor::scalar(x0), horizon, steps, solver, |z, _| Ok(z.map(|v| v * v)))?;
    Ok(traj.terminal().data()[0])
}

/// Partial sums `sum_{k<K} t^k x^{k+1}` for `K = 1..=terms`.
pub fn riccati_series(x0: f64, t: f64, terms: usize) -> Vec<f64> {
    let mut sums = Vec::with_capacity(terms);
    let (mut term, mut acc) = (x0, 0.0);
    for _ in 0..terms {
        acc += term;
        sums.push(acc);
        term *= t * x0;
    }
    sums
}

/// Least-squares slope of `log err` against `log dt`, with `dt = horizon / N`.
pub fn convergence_slope(x0: f64, horizon: f64, steps: &[usize], solver: Solver) -> Result<f64> {
    if steps.len() < 2 {
        return Err(Error::invalid("slope needs at least two step counts"));
    }
    let exact = riccati_reference(x0, horizon)?;
    let mut pts = Vec::with_capacity(steps.len());
    for &n in steps {
        let err = (riccati_numeric(x0, horizon, n, solver)? - exact).abs();
        if err == 0.0 {
            return Err(Error::NonFinite(format!("zero error at N = {n}; slope undefined")));
        }
        pts.push(((horizon / n as f64).ln(), err.ln()));
    }
    Ok(log_log_slope(&pts))
}

/// Least-squares slope of `(x, y)` points.
pub fn log_log_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
