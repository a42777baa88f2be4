//! Basis-function rows `Φ(x)` and design matrices.
//!
//! Four families are supported: monomials, polynomials orthonormal with respect
//! to an empirical sample distribution, piecewise-constant look-up tables, and
//! memory-tapped combinations of a memoryless inner family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::sampling::{Context, SampleBatch};

/// Polynomials orthonormal under the empirical inner product of a sample set.
///
/// Polynomials are stored through the lower-triangular table of their
/// Gram–Schmidt recurrence in the shifted variable `t = (x - center) / scale`:
/// `p_j = (t p_{j-1} - Σ_{i<j} h[j][i] p_i) / h[j][j]`, with `p_0 = 1`.
/// Evaluation follows the recurrence, which stays accurate where a monomial
/// expansion would cancel catastrophically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "OrthoPolyRepr", into = "OrthoPolyRepr")]
pub struct OrthoPoly {
    center: f64,
    scale: f64,
    table: Vec<Vec<f64>>,
    domain: (f64, f64),
    /// Row-major lower triangle of `table`, diagonal stored as reciprocals.
    packed: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OrthoPolyRepr {
    center: f64,
    scale: f64,
    table: Vec<Vec<f64>>,
    domain: (f64, f64),
}

impl From<OrthoPolyRepr> for OrthoPoly {
    fn from(r: OrthoPolyRepr) -> Self {
        OrthoPoly::assemble(r.center, r.scale, r.table, r.domain)
    }
}

impl From<OrthoPoly> for OrthoPolyRepr {
    fn from(p: OrthoPoly) -> Self {
        OrthoPolyRepr {
            center: p.center,
            scale: p.scale,
            table: p.table,
            domain: p.domain,
        }
    }
}

impl OrthoPoly {
    fn assemble(center: f64, scale: f64, table: Vec<Vec<f64>>, domain: (f64, f64)) -> Self {
        let mut packed = Vec::new();
        for (j, row) in table.iter().enumerate() {
            packed.extend_from_slice(&row[..j]);
            packed.push(1.0 / row[j]);
        }
        Self {
            center,
            scale,
            table,
            domain,
            packed,
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }

    fn eval_into(&self, x: f64, out: &mut [f64]) {
        let t = (x - self.center) / self.scale;
        out[0] = 1.0;
        let mut at = 1;
        for j in 1..self.table.len() {
            let row = &self.packed[at..at + j + 1];
            let mut v = t * out[j - 1];
            for (h, p) in row[..j].iter().zip(&out[..j]) {
                v -= h * p;
            }
            out[j] = v * row[j];
            at += j + 1;
        }
    }

    fn derivative_into(&self, x: f64, out: &mut [f64]) {
        let m = self.table.len();
        let mut p = vec![0.0; m];
        self.eval_into(x, &mut p);
        let t = (x - self.center) / self.scale;
        let dt = 1.0 / self.scale;
        out[0] = 0.0;
        for j in 1..m {
            let row = &self.table[j];
            let mut v = dt * p[j - 1] + t * out[j - 1];
            for i in 0..j {
                v -= row[i] * out[i];
            }
            out[j] = v / row[j];
        }
    }
}

/// Piecewise-constant basis over `bins` uniform cells of `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lut {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Lut {
    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins)
            .map(|j| {
                if j == self.bins {
                    self.hi
                } else {
                    self.lo + w * j as f64
                }
            })
            .collect()
    }

    /// Cell of `x` after clamping to the domain; cells are right-closed
    /// `(X_{j-1}, X_j]`, with `lo` itself in the first cell.
    pub fn bin(&self, x: f64) -> usize {
        let x = x.clamp(self.lo, self.hi);
        let pos = (x - self.lo) / (self.hi - self.lo) * self.bins as f64;
        (pos.ceil() as usize).saturating_sub(1).min(self.bins - 1)
    }
}

/// Taps of a memoryless inner family; tap `t` reads sample `x_{n-t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tapped {
    pub offsets: Vec<i32>,
    pub inner: Box<BasisFamily>,
    /// Multiply each tap's row by its sample (`x_{n-t} Φ^t(x_{n-t})`).
    pub gain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasisFamily {
    Monomial { m: usize, lo: f64, hi: f64 },
    OrthogonalPoly(OrthoPoly),
    PiecewiseConstant(Lut),
    MemoryTapped(Tapped),
}

impl BasisFamily {
    pub fn monomial(m: usize, lo: f64, hi: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m", "basis needs at least one function"));
        }
        if !(lo < hi) {
            return Err(Error::invalid("domain", "lo must be < hi"));
        }
        Ok(BasisFamily::Monomial { m, lo, hi })
    }

    pub fn lut(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("bins", "LUT needs at least one bin"));
        }
        if !(lo < hi) {
            return Err(Error::invalid("domain", "lo must be < hi"));
        }
        Ok(BasisFamily::PiecewiseConstant(Lut { bins, lo, hi }))
    }

    pub fn tapped(offsets: Vec<i32>, inner: BasisFamily, gain: bool) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::invalid("offsets", "need at least one tap"));
        }
        if matches!(inner, BasisFamily::MemoryTapped(_)) {
            return Err(Error::invalid("inner", "inner family must be memoryless"));
        }
        let mut sorted = offsets.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != offsets.len() {
            return Err(Error::invalid("offsets", "tap offsets must be distinct"));
        }
        Ok(BasisFamily::MemoryTapped(Tapped {
            offsets,
            inner: Box::new(inner),
            gain,
        }))
    }

    /// Number of basis functions M.
    pub fn len(&self) -> usize {
        match self {
            BasisFamily::Monomial { m, .. } => *m,
            BasisFamily::OrthogonalPoly(p) => p.len(),
            BasisFamily::PiecewiseConstant(l) => l.bins,
            BasisFamily::MemoryTapped(t) => t.offsets.len() * t.inner.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            BasisFamily::Monomial { lo, hi, .. } => (*lo, *hi),
            BasisFamily::OrthogonalPoly(p) => p.domain,
            BasisFamily::PiecewiseConstant(l) => (l.lo, l.hi),
            BasisFamily::MemoryTapped(t) => t.inner.domain(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            BasisFamily::Monomial { .. } => "Monomial",
            BasisFamily::OrthogonalPoly(_) => "OrthogonalPoly",
            BasisFamily::PiecewiseConstant(_) => "PiecewiseConstant",
            BasisFamily::MemoryTapped(_) => "MemoryTapped",
        }
    }

    pub fn context(&self) -> Context {
        match self {
            BasisFamily::MemoryTapped(t) => Context::for_offsets(&t.offsets),
            _ => Context::default(),
        }
    }

    /// Number of constraint blocks (taps) for block-diagonal constraint Grams.
    pub fn block_count(&self) -> usize {
        match self {
            BasisFamily::MemoryTapped(t) => t.offsets.len(),
            _ => 1,
        }
    }

    /// Functions per block.
    pub fn block_len(&self) -> usize {
        self.len() / self.block_count()
    }

    /// Appends the nonzero entries of the row at `samples[idx]`.
    pub fn eval_sparse(
        &self,
        samples: &[f64],
        idx: usize,
        cols: &mut Vec<usize>,
        vals: &mut Vec<f64>,
    ) {
        match self {
            BasisFamily::Monomial { m, .. } => {
                let x = samples[idx];
                let mut v = 1.0;
                for j in 0..*m {
                    cols.push(j);
                    vals.push(v);
                    v *= x;
                }
            }
            BasisFamily::OrthogonalPoly(p) => {
                let start = vals.len();
                vals.resize(start + p.len(), 0.0);
                p.eval_into(samples[idx], &mut vals[start..]);
                cols.extend(0..p.len());
            }
            BasisFamily::PiecewiseConstant(l) => {
                cols.push(l.bin(samples[idx]));
                vals.push(1.0);
            }
            BasisFamily::MemoryTapped(t) => {
                let inner_m = t.inner.len();
                for (block, &off) in t.offsets.iter().enumerate() {
                    let pos = (idx as i64 - off as i64) as usize;
                    let x = samples[pos];
                    let c0 = cols.len();
                    let v0 = vals.len();
                    t.inner.eval_sparse(samples, pos, cols, vals);
                    for c in &mut cols[c0..] {
                        *c += block * inner_m;
                    }
                    if t.gain {
                        for v in &mut vals[v0..] {
                            *v *= x;
                        }
                    }
                }
            }
        }
    }

    /// Dense row `Φ` at `samples[idx]`.
    pub fn eval_row(&self, samples: &[f64], idx: usize) -> Vec<f64> {
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        self.eval_sparse(samples, idx, &mut cols, &mut vals);
        let mut row = vec![0.0; self.len()];
        for (c, v) in cols.into_iter().zip(vals) {
            row[c] += v;
        }
        row
    }

    /// `u(x) = Φ(x)·u` at position `idx` of `samples`.
    pub fn eval_function(&self, u: &[f64], samples: &[f64], idx: usize) -> Result<f64> {
        if u.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: u.len(),
            });
        }
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        self.eval_sparse(samples, idx, &mut cols, &mut vals);
        Ok(cols.iter().zip(&vals).map(|(&c, &v)| u[c] * v).sum())
    }

    /// `u(x)` for a memoryless family at a scalar point.
    pub fn eval_at(&self, u: &[f64], x: f64) -> Result<f64> {
        if matches!(self, BasisFamily::MemoryTapped(_)) {
            return Err(Error::UnsupportedFamily("MemoryTapped"));
        }
        self.eval_function(u, &[x], 0)
    }

    fn derivative_row(&self, z: f64) -> Result<Vec<f64>> {
        match self {
            BasisFamily::Monomial { m, .. } => {
                let mut row = vec![0.0; *m];
                let mut pow = 1.0;
                for (j, r) in row.iter_mut().enumerate().skip(1) {
                    *r = j as f64 * pow;
                    pow *= z;
                }
                Ok(row)
            }
            BasisFamily::OrthogonalPoly(p) => {
                let mut row = vec![0.0; p.len()];
                p.derivative_into(z, &mut row);
                Ok(row)
            }
            other => Err(Error::UnsupportedFamily(other.family_name())),
        }
    }
}

/// Builds polynomials of degree `0..=max_degree`, orthonormal under the
/// empirical inner product `(1/S) Σ p_i(x_s) p_j(x_s)`.
///
/// Gram–Schmidt runs on the sequence `t·p_{j-1}` with a second
/// re-orthogonalization pass per degree. The domain is the sample range;
/// override it with [`OrthoPoly::with_domain`].
pub fn build_orthogonal_polys(samples: &[f64], max_degree: usize) -> Result<BasisFamily> {
    Ok(BasisFamily::OrthogonalPoly(build_ortho(
        samples, max_degree,
    )?))
}

pub fn build_ortho(samples: &[f64], max_degree: usize) -> Result<OrthoPoly> {
    let s = samples.len();
    if s < (100 * max_degree).max(max_degree + 1) {
        return Err(Error::invalid(
            "samples",
            format!(
                "need at least {} samples for degree {max_degree}",
                (100 * max_degree).max(max_degree + 1)
            ),
        ));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let sf = s as f64;
    let center = samples.iter().sum::<f64>() / sf;
    let scale = samples
        .iter()
        .fold(0.0_f64, |m, x| m.max((x - center).abs()));
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_degree >= 1 && scale == 0.0 {
        return Err(Error::DegenerateSamples { degree: 1 });
    }
    let t: Vec<f64> = samples.iter().map(|x| (x - center) / scale).collect();
    let inner = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / sf;

    let mut basis: Vec<Vec<f64>> = vec![vec![1.0; s]];
    let mut table = vec![vec![1.0]];
    for j in 1..=max_degree {
        let mut v: Vec<f64> = t.iter().zip(&basis[j - 1]).map(|(a, b)| a * b).collect();
        let start_norm = inner(&v, &v).sqrt();
        let mut row = vec![0.0; j + 1];
        for _pass in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let h = inner(&v, q);
                row[i] += h;
                for (vv, qq) in v.iter_mut().zip(q) {
                    *vv -= h * qq;
                }
            }
        }
        let nrm = inner(&v, &v).sqrt();
        if !(nrm > 1e-10 * start_norm) {
            return Err(Error::DegenerateSamples { degree: j });
        }
        row[j] = nrm;
        v.iter_mut().for_each(|x| *x /= nrm);
        basis.push(v);
        table.push(row);
    }
    Ok(OrthoPoly::assemble(
        center,
        if scale == 0.0 { 1.0 } else { scale },
        table,
        (lo, hi),
    ))
}

/// Derivative rows `[φ'_j(z_i)]` for polynomial families.
pub fn derivative_rows(b: &BasisFamily, points: &[f64]) -> Result<Matrix> {
    if points.is_empty() {
        return Err(Error::invalid("points", "need at least one point"));
    }
    let mut d = Matrix::zeros(points.len(), b.len());
    for (i, &z) in points.iter().enumerate() {
        let row = b.derivative_row(z)?;
        for (j, v) in row.into_iter().enumerate() {
            d[(i, j)] = v;
        }
    }
    Ok(d)
}

/// `count` equally spaced points in `(max_sample, hi]`.
pub fn constraint_points(max_sample: f64, hi: f64, count: usize) -> Vec<f64> {
    let lo = max_sample.min(hi);
    (1..=count)
        .map(|i| lo + (hi - lo) * i as f64 / count as f64)
        .collect()
}

/// Row-compressed design matrix `Φ_k = [φ_j(x_i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    m: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.iter()
            .zip(v)
            .filter(|(&cc, _)| cc == j)
            .map(|(_, &vv)| vv)
            .sum()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut d = Matrix::zeros(self.n, self.m);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&cc, &vv) in c.iter().zip(v) {
                d[(i, cc)] += vv;
            }
        }
        d
    }

    /// `Φ u`
    pub fn mul_vec(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: u.len(),
            });
        }
        Ok((0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&cc, &vv)| vv * u[cc]).sum()
            })
            .collect())
    }

    /// `Φᵀ r`
    pub fn tr_mul_vec(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: r.len(),
            });
        }
        let mut out = vec![0.0; self.m];
        for (i, &ri) in r.iter().enumerate() {
            let (c, v) = self.row(i);
            for (&cc, &vv) in c.iter().zip(v) {
                out[cc] += vv * ri;
            }
        }
        Ok(out)
    }

    /// `scale · ΦᵀΦ`
    pub fn gram(&self, scale: f64) -> Matrix {
        let mut g = Matrix::zeros(self.m, self.m);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&ca, &va) in c.iter().zip(v) {
                for (&cb, &vb) in c.iter().zip(v) {
                    g[(ca, cb)] += va * vb;
                }
            }
        }
        if scale != 1.0 {
            g.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
        }
        g
    }
}

/// Evaluates the basis at every observed position of a batch.
pub fn eval_design_matrix(b: &BasisFamily, batch: &SampleBatch) -> Result<DesignMatrix> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let need = b.context();
    if batch.context.lead < need.lead || batch.context.trail < need.trail {
        return Err(Error::invalid(
            "context",
            format!("basis needs {need:?}, batch provides {:?}", batch.context),
        ));
    }
    eval_design_at(b, &batch.inputs, batch.context.lead, batch.len())
}

/// Design matrix for positions `first..first + count` of `samples`.
pub fn eval_design_at(
    b: &BasisFamily,
    samples: &[f64],
    first: usize,
    count: usize,
) -> Result<DesignMatrix> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut row_ptr = Vec::with_capacity(count + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for i in 0..count {
        b.eval_sparse(samples, first + i, &mut cols, &mut vals);
        row_ptr.push(cols.len());
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(DesignMatrix {
        n: count,
        m: b.len(),
        row_ptr,
        cols,
        vals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::Context;

    fn batch(inputs: Vec<f64>, context: Context) -> SampleBatch {
        let n = inputs.len() - context.lead - context.trail;
        SampleBatch {
            k: 0,
            outputs: vec![0.0; n],
            inputs,
            context,
            window: (0, 0),
        }
    }

    #[test]
    fn monomial_design() {
        let b = BasisFamily::monomial(3, 0.0, 2.0).unwrap();
        let phi = eval_design_matrix(&b, &batch(vec![0.0, 1.0, 2.0], Context::default())).unwrap();
        assert_eq!(
            phi.to_dense(),
            Matrix::from_rows(&[[1.0, 0.0, 0.0], [1.0, 1.0, 1.0], [1.0, 2.0, 4.0]])
        );
    }

    #[test]
    fn lut_design_and_bins() {
        let b = BasisFamily::lut(4, 0.0, 1.0).unwrap();
        let phi = eval_design_matrix(&b, &batch(vec![0.1, 0.6], Context::default())).unwrap();
        assert_eq!(
            phi.to_dense(),
            Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
        );
        let lut = Lut {
            bins: 4,
            lo: 0.0,
            hi: 1.0,
        };
        assert_eq!(lut.bin(0.0), 0);
        assert_eq!(lut.bin(0.25), 0);
        assert_eq!(lut.bin(0.2500001), 1);
        assert_eq!(lut.bin(1.0), 3);
        assert_eq!(lut.bin(-3.0), 0);
        assert_eq!(lut.bin(7.0), 3);
        assert_eq!(lut.edges(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn tapped_gain_row() {
        // Taps 0, 1, 2 read x_n, x_{n-1}, x_{n-2}; chronological window [x_{n-2}, x_{n-1}, x_n].
        let inner = BasisFamily::lut(2, 0.0, 1.0).unwrap();
        let b = BasisFamily::tapped(vec![0, 1, 2], inner, true).unwrap();
        let ctx = b.context();
        assert_eq!(ctx, Context { lead: 2, trail: 0 });
        let phi = eval_design_matrix(&b, &batch(vec![0.2, 0.8, 0.2], ctx)).unwrap();
        // tap 0: x_n = 0.2 in bin 1; tap 1: x_{n-1} = 0.8 in bin 2; tap 2: x_{n-2} = 0.2 in bin 1.
        assert_eq!(
            phi.to_dense(),
            Matrix::from_rows(&[[0.2, 0.0, 0.0, 0.8, 0.2, 0.0]])
        );
        let plain =
            BasisFamily::tapped(vec![0, 1, 2], BasisFamily::lut(2, 0.0, 1.0).unwrap(), false)
                .unwrap();
        let phi = eval_design_matrix(&plain, &batch(vec![0.2, 0.8, 0.2], ctx)).unwrap();
        assert_eq!(
            phi.to_dense(),
            Matrix::from_rows(&[[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]])
        );
    }

    #[test]
    fn missing_context_is_rejected() {
        let b = BasisFamily::tapped(vec![-1, 0, 1], BasisFamily::lut(2, 0.0, 1.0).unwrap(), true)
            .unwrap();
        assert!(eval_design_matrix(&b, &batch(vec![0.5, 0.5], Context::default())).is_err());
    }

    #[test]
    fn empty_batch() {
        let b = BasisFamily::monomial(2, 0.0, 1.0).unwrap();
        assert_eq!(
            eval_design_matrix(&b, &batch(vec![], Context::default())),
            Err(Error::EmptyBatch)
        );
    }

    #[test]
    fn eval_function_examples() {
        let lut = BasisFamily::lut(2, 0.0, 1.0).unwrap();
        assert_eq!(lut.eval_at(&[5.0, 7.0], 0.8).unwrap(), 7.0);
        assert_eq!(lut.eval_at(&[0.0, 0.0], 0.3).unwrap(), 0.0);
        let mono = BasisFamily::monomial(2, 0.0, 4.0).unwrap();
        assert_eq!(mono.eval_at(&[1.0, 3.0], 2.0).unwrap(), 7.0);
        assert!(matches!(
            mono.eval_at(&[1.0], 2.0),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn derivative_examples() {
        let mono = BasisFamily::monomial(3, 0.0, 1.0).unwrap();
        assert_eq!(
            derivative_rows(&mono, &[1.0]).unwrap(),
            Matrix::from_rows(&[[0.0, 1.0, 2.0]])
        );
        let mono2 = BasisFamily::monomial(2, 0.0, 1.0).unwrap();
        assert_eq!(
            derivative_rows(&mono2, &[0.0]).unwrap(),
            Matrix::from_rows(&[[0.0, 1.0]])
        );
        let lut = BasisFamily::lut(4, 0.0, 1.0).unwrap();
        assert_eq!(
            derivative_rows(&lut, &[0.5]),
            Err(Error::UnsupportedFamily("PiecewiseConstant"))
        );
    }

    #[test]
    fn single_constant_polynomial() {
        let samples: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = build_orthogonal_polys(&samples, 0).unwrap();
        assert_eq!(b.len(), 1);
        let mean_sq: f64 = samples
            .iter()
            .map(|&x| b.eval_row(&[x], 0)[0].powi(2))
            .sum::<f64>()
            / 50.0;
        assert!((mean_sq - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let samples = vec![0.4; 500];
        assert_eq!(
            build_orthogonal_polys(&samples, 2),
            Err(Error::DegenerateSamples { degree: 1 })
        );
        // two distinct values cannot carry a degree-2 polynomial
        let two: Vec<f64> = (0..500)
            .map(|i| if i % 2 == 0 { 0.1 } else { 0.9 })
            .collect();
        assert_eq!(
            build_orthogonal_polys(&two, 2),
            Err(Error::DegenerateSamples { degree: 2 })
        );
    }

    #[test]
    fn constraint_points_span_tail() {
        let z = constraint_points(0.6, 1.0, 8);
        assert_eq!(z.len(), 8);
        assert!(z[0] > 0.6 && (z[7] - 1.0).abs() < 1e-15);
    }
}
