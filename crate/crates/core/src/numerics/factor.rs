//! Symmetric positive-definite factorization (dense and banded Cholesky) and
//! a general partially-pivoted LU for the occasional non-symmetric solve.

use serde::{Deserialize, Serialize};

use super::dense::Matrix;
use crate::error::{Error, Result};

/// Relative pivot threshold: a pivot at or below `PIVOT_TOLERANCE * max(diag)` fails.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Relative asymmetry accepted by [`factorize_spd`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Widest band routed to the banded path by [`factorize_spd`].
pub const MAX_BANDED_WIDTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bandwidth {
    Banded(usize),
    Full,
}

/// Symmetric banded matrix; only the lower band is stored.
///
/// Entry `(i, j)` with `i - p <= j <= i` lives at `i * (p + 1) + (j + p - i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSym {
    n: usize,
    p: usize,
    band: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        assert!(n >= 1);
        Self {
            n,
            p: bandwidth,
            band: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.p
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.p {
            None
        } else {
            Some(i * (self.p + 1) + (j + self.p - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.band[s])
    }

    /// Sets the symmetric pair `(i, j)` and `(j, i)`. Panics outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.band[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.band[s] += v;
    }

    pub fn from_dense(m: &Matrix, bandwidth: usize) -> Self {
        let mut b = Self::zeros(m.rows(), bandwidth);
        for i in 0..m.rows() {
            for j in i.saturating_sub(bandwidth)..=i {
                b.set(i, j, m[(i, j)]);
            }
        }
        b
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in i.saturating_sub(self.p)..=i {
                let v = self.get(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for j in i.saturating_sub(self.p)..=i {
                let v = self.get(i, j);
                y[i] += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    /// Lower-triangular Cholesky factor, row-major.
    Dense(Matrix),
    /// Lower band of the Cholesky factor in [`BandedSym`] layout.
    Banded(BandedSym),
}

/// Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricFactorization {
    payload: Payload,
}

impl SymmetricFactorization {
    pub fn dimension(&self) -> usize {
        match &self.payload {
            Payload::Dense(l) => l.rows(),
            Payload::Banded(b) => b.dimension(),
        }
    }

    pub fn bandwidth(&self) -> Bandwidth {
        match &self.payload {
            Payload::Dense(_) => Bandwidth::Full,
            Payload::Banded(b) => Bandwidth::Banded(b.bandwidth()),
        }
    }

    /// Solves `M x = r` by forward and backward substitution.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.dimension();
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
        let mut x = r.to_vec();
        match &self.payload {
            Payload::Dense(l) => {
                for i in 0..n {
                    let row = l.row(i);
                    let mut s = x[i];
                    for k in 0..i {
                        s -= row[k] * x[k];
                    }
                    x[i] = s / row[i];
                }
                for i in (0..n).rev() {
                    let mut s = x[i];
                    for k in (i + 1)..n {
                        s -= l[(k, i)] * x[k];
                    }
                    x[i] = s / l[(i, i)];
                }
            }
            Payload::Banded(b) => {
                let p = b.bandwidth();
                for i in 0..n {
                    let mut s = x[i];
                    for k in i.saturating_sub(p)..i {
                        s -= b.get(i, k) * x[k];
                    }
                    x[i] = s / b.get(i, i);
                }
                for i in (0..n).rev() {
                    let mut s = x[i];
                    for k in (i + 1)..(i + p + 1).min(n) {
                        s -= b.get(k, i) * x[k];
                    }
                    x[i] = s / b.get(i, i);
                }
            }
        }
        Ok(x)
    }

    /// Rebuilds `L Lᵀ` densely.
    pub fn reconstruct(&self) -> Matrix {
        let l = match &self.payload {
            Payload::Dense(l) => l.clone(),
            Payload::Banded(b) => {
                let n = b.dimension();
                let mut l = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in i.saturating_sub(b.bandwidth())..=i {
                        l[(i, j)] = b.get(i, j);
                    }
                }
                l
            }
        };
        l.matmul(&l.transpose()).expect("square factor")
    }
}

/// Factorizes a symmetric positive-definite matrix, taking the banded path
/// when its bandwidth is at most [`MAX_BANDED_WIDTH`].
pub fn factorize_spd(m: &Matrix) -> Result<SymmetricFactorization> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            found: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let asym = m.relative_asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let bw = m.bandwidth();
    if bw <= MAX_BANDED_WIDTH {
        return factorize_banded(&BandedSym::from_dense(m, bw));
    }
    dense_cholesky(m)
}

fn pivot_floor(diag: impl Iterator<Item = f64>) -> f64 {
    PIVOT_TOLERANCE * diag.fold(0.0_f64, |a, d| a.max(d.abs()))
}

fn dense_cholesky(m: &Matrix) -> Result<SymmetricFactorization> {
    let n = m.rows();
    let floor = pivot_floor(m.diagonal().into_iter());
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= floor || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            let (ri, rj) = (l.row(i), l.row(j));
            for k in 0..j {
                s -= ri[k] * rj[k];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(SymmetricFactorization {
        payload: Payload::Dense(l),
    })
}

/// Banded Cholesky in `O(n p²)` time.
pub fn factorize_banded(a: &BandedSym) -> Result<SymmetricFactorization> {
    let n = a.dimension();
    let p = a.bandwidth();
    let floor = pivot_floor((0..n).map(|i| a.get(i, i)));
    let mut l = BandedSym::zeros(n, p);
    for i in 0..n {
        let lo = i.saturating_sub(p);
        for j in lo..=i {
            let mut s = a.get(i, j);
            for k in lo.max(j.saturating_sub(p))..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= floor || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(SymmetricFactorization {
        payload: Payload::Banded(l),
    })
}

/// Solves `M x = r` with a previously computed factorization.
pub fn solve_factored(f: &SymmetricFactorization, r: &[f64]) -> Result<Vec<f64>> {
    f.solve(r)
}

/// LU factorization with partial pivoting, `P M = L U`.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: Matrix,
    perm: Vec<usize>,
}

pub fn lu_factorize(m: &Matrix) -> Result<LuFactorization> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            found: m.cols(),
        });
    }
    let n = m.rows();
    let scale = m.max_abs();
    if scale == 0.0 {
        return Err(Error::SingularMatrix);
    }
    let mut lu = m.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (piv, pval) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if pval <= 1e-14 * scale {
            return Err(Error::SingularMatrix);
        }
        if piv != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            perm.swap(k, piv);
        }
        let d = lu[(k, k)];
        for i in (k + 1)..n {
            let f = lu[(i, k)] / d;
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
        }
    }
    Ok(LuFactorization { lu, perm })
}

impl LuFactorization {
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows();
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| r[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.lu[(i, k)] * x[k];
            }
            x[i] /= self.lu[(i, i)];
        }
        Ok(x)
    }

    /// Solves for every column of `rhs`.
    pub fn solve_matrix(&self, rhs: &Matrix) -> Result<Matrix> {
        solve_columns(rhs, |c| self.solve(c))
    }
}

impl SymmetricFactorization {
    /// Solves for every column of `rhs`.
    pub fn solve_matrix(&self, rhs: &Matrix) -> Result<Matrix> {
        solve_columns(rhs, |c| self.solve(c))
    }
}

fn solve_columns(rhs: &Matrix, solve: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Matrix> {
    let mut out = Matrix::zeros(rhs.rows(), rhs.cols());
    for j in 0..rhs.cols() {
        let x = solve(&rhs.column(j))?;
        for (i, v) in x.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dense::norm2;

    #[test]
    fn identity_solve_is_noop() {
        let f = factorize_spd(&Matrix::identity(3)).unwrap();
        assert_eq!(f.solve(&[3.0, -1.0, 2.0]).unwrap(), vec![3.0, -1.0, 2.0]);
        let f2 = factorize_spd(&Matrix::identity(2)).unwrap();
        assert_eq!(solve_factored(&f2, &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn diagonal_and_two_by_two() {
        let f = factorize_spd(&Matrix::from_diag(&[2.0, 4.0])).unwrap();
        // solved through √2·√2, so exact only up to one ulp
        let x = f.solve(&[2.0, 4.0]).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() <= 2.0 * f64::EPSILON));

        // [[2,1],[1,1]] x = [3,2]; multiplying back: 2+1 = 3, 1+1 = 2.
        let m = Matrix::from_rows(&[[2.0, 1.0], [1.0, 1.0]]);
        let x = factorize_spd(&m).unwrap().solve(&[3.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        let back = m.matvec(&x).unwrap();
        assert!((back[0] - 3.0).abs() < 1e-14 && (back[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_pivot_is_rejected() {
        let err = factorize_spd(&Matrix::from_diag(&[1.0, 0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [0.5, 1.0]]);
        assert!(matches!(factorize_spd(&m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn tridiagonal_preconditioner_shape_uses_band() {
        // diag(A) + γ DᵀD for M = 4, γ = 0.02, with diag(A) = [0.4, 0.3, 0.2, 0.1].
        // DᵀD = tridiag(-1; 1,2,2,1; -1). Pivots by hand:
        //   d0 = 0.42
        //   d1 = 0.34 - 0.0004/0.42
        //   d2 = 0.24 - 0.0004/d1
        //   d3 = 0.12 - 0.0004/d2
        let diag_a = [0.4, 0.3, 0.2, 0.1];
        let g = 0.02;
        let mut m = Matrix::from_diag(&diag_a);
        let dtd = [1.0, 2.0, 2.0, 1.0];
        for i in 0..4 {
            m[(i, i)] += g * dtd[i];
            if i + 1 < 4 {
                m[(i, i + 1)] = -g;
                m[(i + 1, i)] = -g;
            }
        }
        let d0: f64 = 0.42;
        let d1 = 0.34 - 0.0004 / d0;
        let d2 = 0.24 - 0.0004 / d1;
        let d3 = 0.12 - 0.0004 / d2;
        assert!(d0 > 0.0 && d1 > 0.0 && d2 > 0.0 && d3 > 0.0);

        let f = factorize_spd(&m).unwrap();
        assert_eq!(f.bandwidth(), Bandwidth::Banded(1));
        let rec = f.reconstruct();
        let err = crate::numerics::frobenius_norm(&rec.sub(&m).unwrap());
        assert!(err <= 1e-10 * crate::numerics::frobenius_norm(&m));
    }

    #[test]
    fn dense_path_for_wide_band() {
        let m = Matrix::from_rows(&[
            [4.0, 1.0, 0.5, 0.25],
            [1.0, 4.0, 1.0, 0.5],
            [0.5, 1.0, 4.0, 1.0],
            [0.25, 0.5, 1.0, 4.0],
        ]);
        let f = factorize_spd(&m).unwrap();
        assert_eq!(f.bandwidth(), Bandwidth::Full);
        let r = [1.0, 2.0, 3.0, 4.0];
        let x = f.solve(&r).unwrap();
        let back = m.matvec(&x).unwrap();
        let res: Vec<f64> = back.iter().zip(&r).map(|(a, b)| a - b).collect();
        assert!(norm2(&res) <= 1e-12 * norm2(&r));
    }

    #[test]
    fn solve_checks_length() {
        let f = factorize_spd(&Matrix::identity(3)).unwrap();
        assert!(matches!(
            f.solve(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn lu_solves_nonsymmetric() {
        let m = Matrix::from_rows(&[[0.0, 2.0], [3.0, 1.0]]);
        let lu = lu_factorize(&m).unwrap();
        let x = lu.solve(&[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        assert!(matches!(
            lu_factorize(&Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]])),
            Err(Error::SingularMatrix)
        ));
    }
}
