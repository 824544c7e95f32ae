//! Lipschitz constants of the embedding, the vector field and the discrete
//! flow map.
//!
//! Activations count as 1-Lipschitz (ReLU and sin); the scaled sine
//! embedding `sin(omega0 u)` contributes `omega0` and the Fourier features
//! `[sin 2 pi B x, cos 2 pi B x]` contribute exactly `2 pi ||B||`.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::{latent, Backbone, Model, Solver};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

pub const POWER_ITERATIONS: usize = 50;

/// Largest singular value by power iteration on `A^T A` from a seeded start.
/// May undershoot slightly when the top two singular values nearly coincide.
pub fn spectral_norm(a: &Tensor) -> f64 {
    let (r, c) = (a.rows(), a.cols());
    if r == 0 || c == 0 {
        return 0.0;
    }
    let mut g = rng::seeded(0, stream::PROBE);
    let mut v: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut g)).collect();
    let mut sigma = 0.0;
    let d = a.data();
    for _ in 0..POWER_ITERATIONS {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= n);
        let av: Vec<f64> = (0..r).map(|i| (0..c).map(|j| d[i * c + j] * v[j]).sum()).collect();
        sigma = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = (0..c).map(|j| (0..r).map(|i| d[i * c + j] * av[i]).sum()).collect();
    }
    sigma
}

/// Estimated Lipschitz constants of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub phi: f64,
    /// Of the body with respect to `z` (the time input held fixed).
    pub f: f64,
    pub psi: f64,
}

pub fn lipschitz_estimate(model: &Model) -> LipschitzEstimate {
    let spec = &model.spec;
    let phi = match spec.backbone {
        // weights are stored d_x x m, so the norm of B^T equals that of B
        Backbone::Ffnet => 2.0 * std::f64::consts::PI * spectral_norm(model.block("embed.freq").expect("frequencies")),
        Backbone::Siren => spec.omega0 * spectral_norm(model.block("embed.w").expect("embedding weight")),
        Backbone::Linear => 1.0,
    };
    let mut f = 1.0;
    for i in 0..spec.depth {
        let w = model.block(&format!("body.w{i}")).expect("layer weight");
        let w = if i == 0 { w.select_rows(&(0..spec.embed_dim).collect::<Vec<_>>()) } else { w.clone() };
        f *= spectral_norm(&w);
    }
    let psi = spectral_norm(model.block("out.w").expect("decoder weight"));
    LipschitzEstimate { phi, f, psi }
}

/// Lipschitz factor of one solver step for a field with constant `l`.
pub fn step_factor(solver: Solver, dt: f64, l: f64) -> f64 {
    let h = dt * l;
    match solver {
        Solver::Euler => 1.0 + h,
        Solver::Rk4 => 1.0 + h + h * h / 2.0 + h * h * h / 6.0 + h * h * h * h / 24.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLipschitzReport {
    pub bound: f64,
    pub max_ratio: f64,
    pub checked: usize,
    /// Pairs with coincident points.
    pub skipped: usize,
    pub violations: usize,
}

/// Relative slack allowed before a ratio counts as a violation.
pub const VIOLATION_SLACK: f64 = 1e-9;

/// Checks `||z_N(x1) - z_N(x2)|| <= L_phi * s^N * ||x1 - x2||` over all pairs,
/// with `s = 1 + dt L_f` for Euler and the matching fourth-order factor for
/// RK4.
pub fn flow_lipschitz_check(model: &Model, pairs: &[(Vec<f64>, Vec<f64>)], l_phi: f64, l_f: f64) -> Result<FlowLipschitzReport> {
    let spec = &model.spec;
    if !spec.is_dynamical() {
        return Err(Error::invalid("flow Lipschitz check needs a dynamical model"));
    }
    let d = spec.in_dim;
    if pairs.iter().any(|(a, b)| a.len() != d || b.len() != d) {
        return Err(Error::invalid(format!("pair coordinates must have dimension {d}")));
    }
    let bound = l_phi * step_factor(spec.solver, spec.dt(), l_f).powi(spec.steps as i32);
    let mut report = FlowLipschitzReport { bound, max_ratio: 0.0, checked: 0, skipped: 0, violations: 0 };
    let (kept, gaps): (Vec<_>, Vec<f64>) = pairs
        .iter()
        .filter_map(|(a, b)| {
            let gap = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            (gap > 0.0).then_some(((a, b), gap))
        })
        .unzip();
    report.skipped = pairs.len() - kept.len();
    if report.skipped > 0 {
        log::info!("skipped {} coincident pairs", report.skipped);
    }
    if kept.is_empty() {
        return Ok(report);
    }
    let x1 = Tensor::new(vec![kept.len(), d], kept.iter().flat_map(|(a, _)| a.iter().copied()).collect())?;
    let x2 = Tensor::new(vec![kept.len(), d], kept.iter().flat_map(|(_, b)| b.iter().copied()).collect())?;
    let (z1, z2) = (latent(model, &x1)?, latent(model, &x2)?);
    for (i, gap) in gaps.iter().enumerate() {
        let dz = z1.row(i).iter().zip(z2.row(i)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let ratio = dz / gap;
        report.max_ratio = report.max_ratio.max(ratio);
        report.checked += 1;
        if ratio > bound * (1.0 + VIOLATION_SLACK) {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Seeded pairs of points drawn uniformly from `[-1, 1]^d`.
pub fn random_pairs(n: usize, d: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    use rand::Rng as _;
    let mut g = rng::seeded(seed, stream::PAIRS);
    (0..n)
        .map(|_| {
            let a = (0..d).map(|_| g.random_range(-1.0..=1.0)).collect();
            let b = (0..d).map(|_| g.random_range(-1.0..=1.0)).collect();
            (a, b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_matches_known_norms() {
        let a = Tensor::matrix(2, 2, vec![3., 0., 0., 1.]).unwrap();
        assert!((spectral_norm(&a) - 3.0).abs() < 1e-9);
        let r1 = Tensor::matrix(2, 2, vec![1., -1., 1., -1.]).unwrap();
        assert!((spectral_norm(&r1) - 2.0).abs() < 1e-9);
        assert_eq!(spectral_norm(&Tensor::zeros(&[3, 2])), 0.0);
    }

    #[test]
    fn step_factors() {
        assert_eq!(step_factor(Solver::Euler, 0.1, 2.0), 1.2);
        assert!(step_factor(Solver::Rk4, 0.1, 2.0) < 0.2f64.exp());
    }
}
