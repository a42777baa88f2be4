//! Eigenvalue and norm estimates.
//!
//! Small problems (dimension at most [`EXACT_LIMIT`]) go through a cyclic
//! Jacobi eigendecomposition so that callers get eigenvalues to round-off.
//! Larger problems use power iteration (and inverse iteration through a
//! Cholesky factor for the bottom of the spectrum).

use serde::{Deserialize, Serialize};

use super::dense::{dot, norm2, Matrix};
use super::factor::factorize_spd;
use crate::error::{Error, Result};

/// Dimensions up to this size use the exact Jacobi path.
pub const EXACT_LIMIT: usize = 64;

const MAX_POWER_ITERATIONS: usize = 20_000;
const MAX_JACOBI_SWEEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn vector(&self, idx: usize) -> Vec<f64> {
        self.vectors.column(idx)
    }
}

/// Cyclic Jacobi eigendecomposition of the symmetric part of `m`.
pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            found: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let n = m.rows();
    let mut a = m.symmetric_part();
    let mut v = Matrix::identity(n);
    let total = super::dense::frobenius_norm(&a);

    let mut sweeps = 0;
    loop {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * total || total == 0.0 {
            break;
        }
        if sweeps == MAX_JACOBI_SWEEPS {
            return Err(Error::NoConvergence { iterations: sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn start_vector(n: usize) -> Vec<f64> {
    // Deterministic, and not orthogonal to any coordinate axis.
    let v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.7548776662).fract())
        .collect();
    let nv = norm2(&v);
    v.into_iter().map(|x| x / nv).collect()
}

/// Power iteration for the dominant eigenvalue of a symmetric PSD operator.
fn power_iteration(
    n: usize,
    tol: f64,
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<(f64, usize)> {
    let mut v = start_vector(n);
    let mut estimate = 0.0_f64;
    for it in 1..=MAX_POWER_ITERATIONS {
        let w = apply(&v)?;
        let next = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return Ok((0.0, it));
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if it > 1 && (next - estimate).abs() <= tol * next.abs() {
            return Ok((next, it));
        }
        estimate = next;
    }
    Err(Error::NoConvergence {
        iterations: MAX_POWER_ITERATIONS,
    })
}

/// Largest singular value of `m`.
pub fn spectral_norm(m: &Matrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be > 0"));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    if m.cols() <= EXACT_LIMIT {
        let mtm = m.transpose().matmul(m)?;
        let eig = symmetric_eigen(&mtm)?;
        return Ok(eig.values.last().copied().unwrap_or(0.0).max(0.0).sqrt());
    }
    let (l, _) = power_iteration(m.cols(), tol * tol, |v| m.tr_matvec(&m.matvec(v)?))?;
    Ok(l.max(0.0).sqrt())
}

/// Extreme eigenvalues of a symmetric positive-definite matrix.
pub fn extreme_eigenvalues(m: &Matrix, tol: f64) -> Result<SpectralEstimate> {
    let factor = factorize_spd(m)?;
    if m.rows() <= EXACT_LIMIT {
        let eig = symmetric_eigen(m)?;
        return Ok(SpectralEstimate {
            lambda_max: *eig.values.last().unwrap(),
            lambda_min: eig.values[0],
            iterations_used: 0,
            converged: true,
        });
    }
    let (lmax, it_hi) = power_iteration(m.rows(), tol, |v| m.matvec(v))?;
    let (inv_max, it_lo) = power_iteration(m.rows(), tol, |v| factor.solve(v))?;
    Ok(SpectralEstimate {
        lambda_max: lmax,
        lambda_min: 1.0 / inv_max,
        iterations_used: it_hi + it_lo,
        converged: true,
    })
}

/// `λ_max / λ_min` of a symmetric positive-definite matrix.
///
/// Falls back to the full Jacobi decomposition when power iteration stalls.
pub fn condition_number(m: &Matrix) -> Result<f64> {
    let est = match extreme_eigenvalues(m, 1e-12) {
        Ok(e) => e,
        Err(Error::NoConvergence { .. }) => {
            let eig = symmetric_eigen(m)?;
            SpectralEstimate {
                lambda_max: *eig.values.last().unwrap(),
                lambda_min: eig.values[0],
                iterations_used: 0,
                converged: true,
            }
        }
        Err(e) => return Err(e),
    };
    if est.lambda_min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            index: 0,
            pivot: est.lambda_min,
        });
    }
    Ok((est.lambda_max / est.lambda_min).max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_examples() {
        assert!(
            (spectral_norm(&Matrix::from_diag(&[3.0, 1.0]), 1e-12).unwrap() - 3.0).abs() < 1e-12
        );
        assert!((spectral_norm(&Matrix::identity(4), 1e-12).unwrap() - 1.0).abs() < 1e-12);
        // characteristic polynomial λ² - 6λ + 1 = 0
        let expected = 3.0 + 8f64.sqrt();
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 5.0]]);
        assert!((spectral_norm(&m, 1e-12).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn condition_number_examples() {
        assert!((condition_number(&Matrix::identity(3)).unwrap() - 1.0).abs() < 1e-14);
        assert!(
            (condition_number(&Matrix::from_diag(&[100.0, 1.0])).unwrap() - 100.0).abs() < 1e-10
        );
        assert!(matches!(
            condition_number(&Matrix::from_diag(&[1.0, -1.0])),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn jacobi_matches_closed_form() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let eig = symmetric_eigen(&m).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 3.0).abs() < 1e-14);
        let v = eig.vector(0);
        assert!((v[0] + v[1]).abs() < 1e-14);
    }

    #[test]
    fn power_path_agrees_with_jacobi_above_limit() {
        let n = 80;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0 + i as f64;
            if i + 1 < n {
                m[(i, i + 1)] = 0.3;
                m[(i + 1, i)] = 0.3;
            }
        }
        let eig = symmetric_eigen(&m).unwrap();
        let est = extreme_eigenvalues(&m, 1e-13).unwrap();
        assert!((est.lambda_max - eig.values[n - 1]).abs() < 1e-8 * eig.values[n - 1]);
        assert!((est.lambda_min - eig.values[0]).abs() < 1e-8 * eig.values[0]);
        let sn = spectral_norm(&m, 1e-10).unwrap();
        assert!((sn - eig.values[n - 1]).abs() < 1e-7 * sn);
    }
}
