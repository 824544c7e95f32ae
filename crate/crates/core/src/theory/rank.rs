//! Numerical rank of cumulative Jacobian products.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::theory::gradient::JacobianChain;
use crate::theory::linalg::{numerical_rank, row_space_basis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankReport {
    pub rank_p: usize,
    pub rank_j0: usize,
    /// Every factor is nonzero and some later factor has a row outside the
    /// row space of `J_0`.
    pub hypotheses_met: bool,
    /// `rank(P) > rank(J_0)`.
    pub satisfied: bool,
}

/// Largest norm of a row of `m` after removing its component in the span of
/// the orthonormal `basis`, relative to the Frobenius norm of `m`.
pub fn row_space_residual(m: &Tensor, basis: &[Vec<f64>]) -> f64 {
    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..m.rows() {
        let mut r = m.row(i).to_vec();
        for b in basis {
            let c: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        worst = worst.max(r.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    worst / norm
}

/// Compares `rank(P)` with `rank(J_0)`, singular values counted at or above
/// `tol_ratio * sigma_max`. Hypothesis failures are reported, not raised.
pub fn rank_propagation_check(chain: &JacobianChain, tol_ratio: f64) -> Result<RankReport> {
    if chain.is_empty() {
        return Err(Error::invalid("rank check needs at least one Jacobian"));
    }
    if !(tol_ratio > 0.0 && tol_ratio < 1.0) {
        return Err(Error::invalid("rank tolerance must lie in (0, 1)"));
    }
    let j0 = &chain.jacobians[0];
    let basis = row_space_basis(j0, tol_ratio);
    let nonzero = chain.jacobians.iter().all(|j| j.frobenius_norm() > 0.0);
    let escapes = chain.jacobians[1..].iter().any(|j| row_space_residual(j, &basis) > tol_ratio);
    let rank_p = numerical_rank(&chain.total(), tol_ratio);
    let rank_j0 = numerical_rank(j0, tol_ratio);
    Ok(RankReport { rank_p, rank_j0, hypotheses_met: nonzero && escapes, satisfied: rank_p > rank_j0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complementary_rank_one_factors() {
        let j0 = Tensor::matrix(2, 2, vec![1., 0., 0., 0.]).unwrap();
        let j1 = Tensor::matrix(2, 2, vec![0., 0., 0., 1.]).unwrap();
        let r = rank_propagation_check(&JacobianChain::new(vec![j0, j1], 0.01).unwrap(), 1e-8).unwrap();
        assert_eq!((r.rank_p, r.rank_j0), (2, 1));
        assert!(r.hypotheses_met && r.satisfied);
    }

    #[test]
    fn identical_factors_flag_hypothesis() {
        let j = Tensor::matrix(2, 2, vec![1., 2., 2., 4.]).unwrap();
        let r = rank_propagation_check(&JacobianChain::new(vec![j.clone(), j.clone(), j], 0.01).unwrap(), 1e-8).unwrap();
        assert!(!r.hypotheses_met);
    }
}
