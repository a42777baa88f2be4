//! Constraint operators, preconditioner assembly, and the admissibility
//! (relative positive-definiteness) check that governs convergence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    axpy, dot, factorize_banded, factorize_spd, lu_factorize, norm2, spectral_norm,
    symmetric_eigen, BandedSym, Matrix, SymmetricFactorization, EXACT_LIMIT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    FirstDifference,
    DerivativeAtPoints,
    None,
}

/// A constraint `D Δu ≈ 0` on each update (per block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintOperator {
    pub kind: ConstraintKind,
    /// `D` for one block; `None` for [`ConstraintKind::None`].
    pub d: Option<Matrix>,
    /// Width of one block (columns of `D`).
    pub block_len: usize,
}

impl ConstraintOperator {
    pub fn first_difference(block_len: usize) -> Result<Self> {
        Ok(Self {
            kind: ConstraintKind::FirstDifference,
            d: Some(first_difference_operator(block_len)?),
            block_len,
        })
    }

    pub fn derivative_at_points(d: Matrix) -> Self {
        Self {
            kind: ConstraintKind::DerivativeAtPoints,
            block_len: d.cols(),
            d: Some(d),
        }
    }

    pub fn none(block_len: usize) -> Self {
        Self {
            kind: ConstraintKind::None,
            d: None,
            block_len,
        }
    }
}

/// `(M-1)×M` first-difference matrix with rows `(-1, 1)` on adjacent columns.
pub fn first_difference_operator(m: usize) -> Result<Matrix> {
    if m < 2 {
        return Err(Error::invalid("m", "first difference needs M >= 2"));
    }
    let mut d = Matrix::zeros(m - 1, m);
    for i in 0..m - 1 {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 1.0;
    }
    Ok(d)
}

/// Block-diagonal `C` with `block_count` copies of `DᵀD`; zero when unconstrained.
pub fn constraint_gram(op: &ConstraintOperator, block_count: usize) -> Result<Matrix> {
    if block_count == 0 {
        return Err(Error::invalid("block_count", "must be >= 1"));
    }
    let n = op.block_len * block_count;
    let mut c = Matrix::zeros(n, n);
    let Some(d) = &op.d else {
        return Ok(c);
    };
    let dtd = d.transpose().matmul(d)?;
    for b in 0..block_count {
        let o = b * op.block_len;
        for i in 0..op.block_len {
            for j in 0..op.block_len {
                c[(o + i, o + j)] = dtd[(i, j)];
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BChoice {
    Identity,
    DiagOfA,
    FullA,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditionerSpec {
    pub b: BChoice,
    pub constraint: ConstraintOperator,
    pub block_count: usize,
}

impl PreconditionerSpec {
    pub fn new(b: BChoice, constraint: ConstraintOperator, block_count: usize) -> Result<Self> {
        if block_count == 0 {
            return Err(Error::invalid("block_count", "must be >= 1"));
        }
        Ok(Self {
            b,
            constraint,
            block_count,
        })
    }

    pub fn dimension(&self) -> usize {
        self.constraint.block_len * self.block_count
    }

    /// Dense `B`, reading `A` where the choice needs it.
    pub fn b_matrix(&self, a_ref: Option<&Matrix>) -> Result<Matrix> {
        let m = self.dimension();
        match (self.b, a_ref) {
            (BChoice::Identity, _) => Ok(Matrix::identity(m)),
            (BChoice::DiagOfA, Some(a)) => {
                check_square(a, m)?;
                Ok(Matrix::from_diag(&a.diagonal()))
            }
            (BChoice::FullA, Some(a)) => {
                check_square(a, m)?;
                Ok(a.clone())
            }
            (_, None) => Err(Error::invalid(
                "a_ref",
                "reference Gram required for this B choice",
            )),
        }
    }

    /// Dense `B + γC`.
    pub fn matrix(&self, gamma: f64, a_ref: Option<&Matrix>) -> Result<Matrix> {
        let b = self.b_matrix(a_ref)?;
        let c = constraint_gram(&self.constraint, self.block_count)?;
        b.add_scaled(gamma, &c)
    }
}

fn check_square(a: &Matrix, m: usize) -> Result<()> {
    if a.rows() != m || a.cols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: a.rows(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckMode {
    Exact,
    Sampled,
}

/// Outcome of the relative positive-definiteness check `xᵀ B⁻¹ A x > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub witness: Option<Vec<f64>>,
    pub min_quotient: f64,
    pub mode: CheckMode,
}

/// The preconditioner `(B + γC)` factored once for the whole run.
#[derive(Debug, Clone)]
pub struct PreconditionerFactor {
    pub spec: PreconditionerSpec,
    pub gamma: f64,
    pub factor: SymmetricFactorization,
    /// `‖(B + γC)⁻¹‖_F`
    pub d: f64,
    /// Present when a reference `A` was available to check against.
    pub admissibility: Option<AdmissibilityReport>,
}

impl PreconditionerFactor {
    pub fn dimension(&self) -> usize {
        self.factor.dimension()
    }

    /// `(B + γC)⁻¹ r`
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve(r)
    }
}

/// Assembles and factors `B + γC`, computing `d = ‖(B + γC)⁻¹‖_F` by solving
/// unit-vector systems.
///
/// Diagonal `B` with a first-difference (or no) constraint is assembled
/// directly in tridiagonal form, so large LUT systems never go dense.
pub fn assemble_preconditioner(
    spec: &PreconditionerSpec,
    gamma: f64,
    a_ref: Option<&Matrix>,
) -> Result<PreconditionerFactor> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma", "must be >= 0"));
    }
    let m = spec.dimension();
    let banded = matches!(spec.b, BChoice::Identity | BChoice::DiagOfA)
        && matches!(
            spec.constraint.kind,
            ConstraintKind::FirstDifference | ConstraintKind::None
        );
    let factor = if banded {
        let diag = match spec.b {
            BChoice::Identity => vec![1.0; m],
            _ => {
                let a = a_ref.ok_or_else(|| {
                    Error::invalid("a_ref", "reference Gram required for diag(A)")
                })?;
                check_square(a, m)?;
                a.diagonal()
            }
        };
        let mut p = BandedSym::zeros(m, 1);
        for (i, &v) in diag.iter().enumerate() {
            p.set(i, i, v);
        }
        if spec.constraint.kind == ConstraintKind::FirstDifference && gamma > 0.0 {
            let bl = spec.constraint.block_len;
            for blk in 0..spec.block_count {
                for j in 0..bl - 1 {
                    let (i0, i1) = (blk * bl + j, blk * bl + j + 1);
                    p.add(i0, i0, gamma);
                    p.add(i1, i1, gamma);
                    p.add(i1, i0, -gamma);
                }
            }
        }
        factorize_banded(&p)?
    } else {
        factorize_spd(&spec.matrix(gamma, a_ref)?)?
    };

    let mut frob = 0.0;
    let mut e = vec![0.0; m];
    for j in 0..m {
        e[j] = 1.0;
        frob += factor.solve(&e)?.iter().map(|v| v * v).sum::<f64>();
        e[j] = 0.0;
    }

    let admissibility = match a_ref {
        Some(a) => Some(check_relative_pd(
            &spec.matrix(gamma, Some(a))?,
            a,
            CheckMode::Exact,
            0,
        )?),
        None => None,
    };

    Ok(PreconditionerFactor {
        spec: spec.clone(),
        gamma,
        factor,
        d: frob.sqrt(),
        admissibility,
    })
}

/// Minimizes `xᵀ B⁻¹ A x` over unit vectors.
///
/// Exact mode uses the smallest eigenvalue of the symmetric part of `B⁻¹A`
/// and is used automatically up to dimension 64; sampled mode scans 10⁴
/// random directions and polishes the best one with restarted 50-step
/// Lanczos cycles, so an admissible verdict there holds only up to sampling.
pub fn check_relative_pd(
    b: &Matrix,
    a: &Matrix,
    mode: CheckMode,
    seed: u64,
) -> Result<AdmissibilityReport> {
    check_square(a, b.rows())?;
    let lu = lu_factorize(b).map_err(|e| match e {
        Error::SingularMatrix => Error::SingularMatrix,
        other => other,
    })?;
    let k = lu.solve_matrix(a)?;
    let sym = k.symmetric_part();
    let mode = if b.rows() > EXACT_LIMIT {
        CheckMode::Sampled
    } else {
        mode
    };
    let (min_quotient, x) = match mode {
        CheckMode::Exact => {
            let eig = symmetric_eigen(&sym)?;
            (eig.values[0], eig.vector(0))
        }
        CheckMode::Sampled => sampled_minimum(&sym, seed)?,
    };
    let admissible = min_quotient > 0.0;
    Ok(AdmissibilityReport {
        admissible,
        witness: (!admissible).then_some(x),
        min_quotient,
        mode,
    })
}

const LANCZOS_STEPS: usize = 50;
const LANCZOS_RESTARTS: usize = 20;

/// Smallest Ritz pair of a `LANCZOS_STEPS`-dimensional Krylov space started
/// at `x0` (full reorthogonalization). Returns the exact quotient of the
/// Ritz vector, so the value is always attained by a unit vector.
fn lanczos_min(sym: &Matrix, x0: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = sym.rows();
    let steps = LANCZOS_STEPS.min(m);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let n0 = norm2(x0);
    let mut q: Vec<f64> = x0.iter().map(|v| v / n0).collect();
    for j in 0..steps {
        let mut w = sym.matvec(&q)?;
        let a = dot(&q, &w);
        alpha.push(a);
        basis.push(q);
        for _pass in 0..2 {
            for v in &basis {
                let h = dot(v, &w);
                axpy(-h, v, &mut w);
            }
        }
        let b = norm2(&w);
        if j + 1 == steps || b <= 1e-13 * a.abs().max(1.0) {
            break;
        }
        beta.push(b);
        q = w.iter().map(|v| v / b).collect();
    }
    let k = alpha.len();
    let mut t = Matrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let y = symmetric_eigen(&t)?.vector(0);
    let mut x = vec![0.0; m];
    for (yi, v) in y.iter().zip(&basis) {
        axpy(*yi, v, &mut x);
    }
    let n = norm2(&x);
    x.iter_mut().for_each(|v| *v /= n);
    Ok((dot(&x, &sym.matvec(&x)?), x))
}

fn sampled_minimum(sym: &Matrix, seed: u64) -> Result<(f64, Vec<f64>)> {
    let m = sym.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quotient = |x: &[f64]| -> Result<f64> { Ok(dot(x, &sym.matvec(x)?)) };
    let mut best = (f64::INFINITY, vec![0.0; m]);
    for _ in 0..10_000 {
        let mut x: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm2(&x);
        x.iter_mut().for_each(|v| *v /= n);
        let q = quotient(&x)?;
        if q < best.0 {
            best = (q, x);
        }
    }
    for _ in 0..LANCZOS_RESTARTS {
        let (q, x) = lanczos_min(sym, &best.1)?;
        let improved = q < best.0 - 1e-12 * best.0.abs().max(1.0);
        if q < best.0 {
            best = (q, x);
        }
        if !improved {
            break;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauBranch {
    /// `τ ≥ 1`; always the case since `λ_min ≤ λ_max` by construction.
    AtLeastOne,
    BelowOne,
}

/// Contraction parameters of the mean iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Params {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub tau: f64,
    pub lambda: f64,
    pub mu0: f64,
    pub branch: TauBranch,
}

impl Lemma1Params {
    /// `|1 - μλ|`, the guaranteed per-step factor at step size `μ`.
    pub fn factor(&self, mu: f64) -> f64 {
        (1.0 - mu * self.lambda).abs()
    }

    /// Builds `λ`, `μ0` from extreme values.
    pub fn from_extremes(lambda_min: f64, lambda_max: f64) -> Self {
        let tau = lambda_max / lambda_min;
        if tau >= 1.0 {
            let s = (1.0 - 1.0 / (tau * tau)).sqrt();
            Self {
                lambda_min,
                lambda_max,
                tau,
                lambda: lambda_max * (1.0 - s) * tau,
                mu0: 1.0 / (tau * lambda_max),
                branch: TauBranch::AtLeastOne,
            }
        } else {
            Self {
                lambda_min,
                lambda_max,
                tau,
                lambda: lambda_max / 2.0,
                mu0: 8.0 * (2.0 - tau) / (3.0 * tau * lambda_max),
                branch: TauBranch::BelowOne,
            }
        }
    }
}

/// `11` equally spaced values on `[0, gamma0]` (just `{0}` when `gamma0 = 0`).
pub fn gamma_grid(gamma0: f64) -> Vec<f64> {
    if gamma0 == 0.0 {
        vec![0.0]
    } else {
        (0..=10).map(|i| gamma0 * i as f64 / 10.0).collect()
    }
}

/// `(B + γC)⁻¹ A` for one γ.
pub fn preconditioned_operator(a: &Matrix, b: &Matrix, c: &Matrix, gamma: f64) -> Result<Matrix> {
    let p = b.add_scaled(gamma, c)?;
    factorize_spd(&p)?.solve_matrix(a)
}

/// Extreme quotients of `(B + γC)⁻¹ A` over the γ grid and the derived
/// step-size parameters.
pub fn lemma1_params(a: &Matrix, b: &Matrix, c: &Matrix, gammas: &[f64]) -> Result<Lemma1Params> {
    if gammas.is_empty() {
        return Err(Error::invalid("gammas", "grid must not be empty"));
    }
    let mut lmin = f64::INFINITY;
    let mut lmax = 0.0_f64;
    for &g in gammas {
        let k = preconditioned_operator(a, b, c, g)?;
        let q = symmetric_eigen(&k.symmetric_part())?.values[0];
        if q <= 0.0 {
            return Err(Error::NotAdmissible {
                gamma: g,
                min_quotient: q,
            });
        }
        lmin = lmin.min(q);
        lmax = lmax.max(spectral_norm(&k, 1e-12)?);
    }
    Ok(Lemma1Params::from_extremes(lmin, lmax))
}

/// Finds an admissible `γ0 ≤ gamma0` by halving, checking an 11-point grid each time.
pub fn search_gamma0(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    gamma0: f64,
) -> Result<(f64, Lemma1Params)> {
    let mut g0 = gamma0;
    let mut last = None;
    for _ in 0..=20 {
        match lemma1_params(a, b, c, &gamma_grid(g0)) {
            Ok(p) => return Ok((g0, p)),
            Err(e @ Error::NotAdmissible { .. }) => {
                last = Some(e);
                g0 /= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
