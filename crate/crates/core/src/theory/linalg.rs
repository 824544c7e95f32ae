//! Dense symmetric eigenvalues and singular values by Jacobi rotations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 100;

fn square_dim(k: &Tensor) -> Result<usize> {
    if k.shape().len() != 2 || k.rows() != k.cols() {
        return Err(Error::invalid(format!("expected a square matrix, got {:?}", k.shape())));
    }
    Ok(k.rows())
}

/// Eigenvalues of a symmetric matrix, descending.
///
/// Cyclic Jacobi: sweeps over all `(p, q)` pairs, annihilating each
/// off-diagonal entry, until the off-diagonal Frobenius norm falls below
/// `1e-10 * ||K||_F`. Inputs asymmetric by more than `1e-8` (relative to the
/// largest entry, floored at 1) are rejected.
pub fn eigen_sym(k: &Tensor) -> Result<Vec<f64>> {
    let n = square_dim(k)?;
    let scale = k.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut a = k.data().to_vec();
    for i in 0..n {
        for j in i + 1..n {
            let (x, y) = (a[i * n + j], a[j * n + i]);
            if (x - y).abs() > 1e-8 * scale {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j}): {x} vs {y}")));
            }
            let m = 0.5 * (x + y);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let norm = k.frobenius_norm();
    let tol = 1e-10 * norm;
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) >= tol && norm > 0.0 {
        if sweeps == MAX_SWEEPS {
            return Err(Error::invalid("Jacobi eigensolver did not converge"));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (arp, arq) = (a[r * n + p], a[r * n + q]);
                    a[r * n + p] = c * arp - s * arq;
                    a[r * n + q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let (apr, aqr) = (a[p * n + r], a[q * n + r]);
                    a[p * n + r] = c * apr - s * aqr;
                    a[q * n + r] = s * apr + c * aqr;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}

/// One-sided (Hestenes) Jacobi on the columns of a row-major `rows x cols`
/// matrix. Returns the orthogonalized columns `A V`, column-major.
fn hestenes(data: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut u: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| data[i * cols + j]).collect()).collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = u[p].iter().map(|v| v * v).sum();
                let beta: f64 = u[q].iter().map(|v| v * v).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(a, b)| a * b).sum();
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = u.split_at_mut(q);
                for (a, b) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (x, y) = (*a, *b);
                    *a = c * x - s * y;
                    *b = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    u
}

/// Singular values, descending.
pub fn singular_values(a: &Tensor) -> Vec<f64> {
    let (r, c) = (a.rows(), a.cols());
    // orthogonalize along the shorter side
    let cols = if c <= r { hestenes(a.data(), r, c) } else { hestenes(a.transpose().data(), c, r) };
    let mut s: Vec<f64> = cols.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Count of singular values at or above `tol_ratio * sigma_max`.
pub fn numerical_rank(a: &Tensor, tol_ratio: f64) -> usize {
    let s = singular_values(a);
    let max = s.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v >= tol_ratio * max).count()
}

/// Orthonormal basis (as rows) of the row space of `a`, keeping directions
/// with singular value at least `tol_ratio * sigma_max`.
pub fn row_space_basis(a: &Tensor, tol_ratio: f64) -> Vec<Vec<f64>> {
    let at = a.transpose();
    let cols = hestenes(at.data(), at.rows(), at.cols());
    let norms: Vec<f64> = cols.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    cols.into_iter()
        .zip(norms)
        .filter(|(_, n)| max > 0.0 && *n >= tol_ratio * max)
        .map(|(v, n)| v.into_iter().map(|x| x / n).collect())
        .collect()
}

/// Product `a b` of square matrices stored row-major.
pub(crate) fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    crate::tensor::gemm(n, n, n, a, false, b, false, &mut out, 0.0);
    out
}

/// Determinant by partial-pivot LU; used by the eigensolver checks.
pub fn determinant(k: &Tensor) -> Result<f64> {
    let n = square_dim(k)?;
    let mut a = k.data().to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).expect("nonempty");
        if a[piv * n + col] == 0.0 {
            return Ok(0.0);
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            det = -det;
        }
        let d = a[col * n + col];
        det *= d;
        for i in col + 1..n {
            let f = a[i * n + col] / d;
            for j in col..n {
                a[i * n + j] -= f * a[col * n + j];
            }
        }
    }
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_hand_cases() {
        assert_eq!(eigen_sym(&Tensor::identity(4)).unwrap(), vec![1.0; 4]);
        let e = eigen_sym(&Tensor::matrix(2, 2, vec![2., 1., 1., 2.]).unwrap()).unwrap();
        assert!((e[0] - 3.0).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
        // R^T diag(3, 1) R for a rotation by 0.7 rad
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let r = Tensor::matrix(2, 2, vec![c, -s, s, c]).unwrap();
        let dm = Tensor::matrix(2, 2, vec![3., 0., 0., 1.]).unwrap();
        let k = r.transpose().matmul(&dm).unwrap().matmul(&r).unwrap();
        let e = eigen_sym(&k).unwrap();
        assert!((e[0] - 3.0).abs() < 1e-10 && (e[1] - 1.0).abs() < 1e-10);
        assert!(eigen_sym(&Tensor::matrix(2, 2, vec![1., 2., 0., 1.]).unwrap()).is_err());
    }

    #[test]
    fn svd_and_rank() {
        let a = Tensor::matrix(3, 2, vec![3., 0., 0., 4., 0., 0.]).unwrap();
        let s = singular_values(&a);
        assert!((s[0] - 4.0).abs() < 1e-12 && (s[1] - 3.0).abs() < 1e-12);
        let r1 = Tensor::matrix(2, 3, vec![1., 2., 3., 2., 4., 6.]).unwrap();
        assert_eq!(numerical_rank(&r1, 1e-8), 1);
        assert_eq!(numerical_rank(&Tensor::zeros(&[2, 2]), 1e-8), 0);
        let b = row_space_basis(&r1, 1e-8);
        assert_eq!(b.len(), 1);
        let n: f64 = 14f64.sqrt();
        assert!(b[0].iter().zip([1. / n, 2. / n, 3. / n]).all(|(x, y)| (x.abs() - y).abs() < 1e-12));
    }

    #[test]
    fn determinant_small() {
        let a = Tensor::matrix(3, 3, vec![2., 0., 1., 1., 3., 2., 1., 1., 2.]).unwrap();
        assert!((determinant(&a).unwrap() - 6.0).abs() < 1e-12);
    }
}
