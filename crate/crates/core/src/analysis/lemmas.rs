//! Verifiers for the contraction bound, the Frobenius product inequality,
//! and the exact one-step second-moment recursion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{jackknife_se, LemmaReport, TrialDetail, JACKKNIFE_GROUPS};
use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::numerics::{factorize_spd, norm2, outer, spectral_norm, Matrix};
use crate::regularization::{
    check_relative_pd, constraint_gram, gamma_grid, lemma1_params, preconditioned_operator,
    CheckMode, ConstraintOperator,
};

/// Checks `‖I − μ(B+γC)⁻¹A‖₂ ≤ |1 − μλ|` on every `γ` of the grid and every
/// `μ = f·μ0` for `f` in `mu_fractions ⊂ (0, 1]`.
pub fn verify_lemma1(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    gammas: &[f64],
    mu_fractions: &[f64],
) -> Result<LemmaReport> {
    if mu_fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::invalid("mu_fractions", "must lie in (0, 1]"));
    }
    let params = lemma1_params(a, b, c, gammas)?;
    let m = a.rows();
    let mut details = Vec::new();
    for &g in gammas {
        let k = preconditioned_operator(a, b, c, g)?;
        for &frac in mu_fractions {
            let mu = frac * params.mu0;
            let lhs = spectral_norm(&Matrix::identity(m).add_scaled(-mu, &k)?, 1e-14)?;
            let rhs = params.factor(mu);
            details.push(TrialDetail {
                label: format!("gamma={g:e} mu={mu:e}"),
                lhs,
                rhs,
                violation: lhs - rhs,
            });
        }
    }
    let mut notes = vec![format!(
        "lambda_min={:e} lambda_max={:e} tau={:e} lambda={:e} mu0={:e}",
        params.lambda_min, params.lambda_max, params.tau, params.lambda, params.mu0
    )];
    if params.branch == crate::regularization::TauBranch::BelowOne {
        notes.push("tau < 1 branch used".into());
    }
    Ok(LemmaReport::from_details("lemma1", details, 1e-9, notes))
}

/// Random SPD matrix `Q diag(λ) Qᵀ` with log-uniform eigenvalues in
/// `[1e-2, 1]` and a Haar-like orthogonal `Q`.
pub fn random_spd<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Matrix {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    while q.len() < m {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for prev in &q {
                let d = crate::numerics::dot(&v, prev);
                v.iter_mut().zip(prev).for_each(|(x, p)| *x -= d * p);
            }
        }
        let n = norm2(&v);
        if n > 1e-8 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let lambdas: Vec<f64> = (0..m)
        .map(|_| 10f64.powf(rng.random_range(-2.0..=0.0)))
        .collect();
    let mut a = Matrix::zeros(m, m);
    for (l, col) in lambdas.iter().zip(&q) {
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] += l * col[i] * col[j];
            }
        }
    }
    a.symmetric_part()
}

/// Lemma-1 check over random admissible instances: `M ≤ max_m`,
/// `B ∈ {I, diag(A)}`, `C` the first-difference Gram, `γ ∈ {0, 0.02}`, and
/// `μ ∈ {μ0, μ0/2}`. Inadmissible draws are skipped and counted.
pub fn lemma1_random_suite(instances: usize, max_m: usize, seed: u64) -> Result<LemmaReport> {
    if max_m < 2 {
        return Err(Error::invalid("max_m", "must be >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut details = Vec::new();
    let mut tested = 0;
    let mut skipped = 0;
    let mut attempt = 0usize;
    while tested < instances {
        let m = rng.random_range(2..=max_m);
        let a = random_spd(m, &mut rng);
        let use_diag = attempt % 2 == 1;
        let gamma0 = if (attempt / 2).is_multiple_of(2) {
            0.0
        } else {
            0.02
        };
        attempt += 1;
        let b = if use_diag {
            Matrix::from_diag(&a.diagonal())
        } else {
            Matrix::identity(m)
        };
        let c = constraint_gram(&ConstraintOperator::first_difference(m)?, 1)?;
        match verify_lemma1(&a, &b, &c, &gamma_grid(gamma0), &[1.0, 0.5]) {
            Ok(rep) => {
                let tag = format!(
                    "instance {tested} M={m} B={} gamma0={gamma0}",
                    if use_diag { "diag(A)" } else { "I" }
                );
                details.extend(rep.details.into_iter().map(|mut d| {
                    d.label = format!("{tag} {}", d.label);
                    d
                }));
                tested += 1;
            }
            Err(Error::NotAdmissible { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let notes = vec![format!(
        "{tested} admissible instances tested, {skipped} inadmissible draws skipped"
    )];
    Ok(LemmaReport::from_details("lemma1", details, 1e-9, notes))
}

/// The classic `A = [[1,2],[2,5]]`, `B = [[2,1],[1,1]]` pair: inadmissible
/// with quotient `−1` at `x = [1, 0]`.
pub fn counterexample_check() -> Result<LemmaReport> {
    let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 5.0]]);
    let b = Matrix::from_rows(&[[2.0, 1.0], [1.0, 1.0]]);
    let rep = check_relative_pd(&b, &a, CheckMode::Exact, 0)?;
    let mut violation = (rep.min_quotient + 1.0).abs();
    if rep.admissible {
        violation = f64::INFINITY;
    }
    let witness_ok = rep
        .witness
        .as_ref()
        .is_some_and(|w| (w[0].abs() - 1.0).abs() < 1e-12 && w[1].abs() < 1e-12);
    if !witness_ok {
        violation = f64::INFINITY;
    }
    Ok(LemmaReport::from_details(
        "counterexample",
        vec![TrialDetail {
            label: "min quotient vs -1".into(),
            lhs: rep.min_quotient,
            rhs: -1.0,
            violation,
        }],
        1e-12,
        vec![format!("witness {:?}", rep.witness)],
    ))
}

/// Draws `(P, Q, v, w)` with `(v, w)` independent of `(P, Q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Lemma3Family {
    /// Shifted Gaussian entries; `Q` shares a factor with `P`, `w` with `v`.
    Gaussian,
    /// Uniform entries; `Q = (P + U)/2`, `w = v + U`.
    Uniform,
    /// Biased signs for `P`, `Q = P ∘ S`; small-integer `v`, `w` its reversal.
    Discrete,
}

impl Lemma3Family {
    pub const ALL: [Lemma3Family; 3] = [
        Lemma3Family::Gaussian,
        Lemma3Family::Uniform,
        Lemma3Family::Discrete,
    ];

    fn draw<R: Rng + ?Sized>(
        self,
        m: usize,
        rng: &mut R,
        p: &mut [f64],
        q: &mut [f64],
        v: &mut [f64],
        w: &mut [f64],
    ) {
        let mut z = || -> f64 { StandardNormal.sample(rng) };
        match self {
            Lemma3Family::Gaussian => {
                for (pi, qi) in p.iter_mut().zip(q.iter_mut()) {
                    let g1 = z();
                    let g2 = z();
                    *pi = 0.5 + g1;
                    *qi = 0.3 + 0.7 * g1 + 0.7 * g2;
                }
                for (vi, wi) in v.iter_mut().zip(w.iter_mut()) {
                    *vi = 1.0 + z();
                    *wi = 0.5 * *vi - 0.2 + z();
                }
            }
            Lemma3Family::Uniform => {
                for (pi, qi) in p.iter_mut().zip(q.iter_mut()) {
                    let u1: f64 = rng.random();
                    let u2: f64 = rng.random();
                    *pi = u1;
                    *qi = 0.5 * (u1 + u2);
                }
                for (vi, wi) in v.iter_mut().zip(w.iter_mut()) {
                    *vi = rng.random_range(-0.5..1.5);
                    *wi = *vi + rng.random_range(-1.0..1.0);
                }
            }
            Lemma3Family::Discrete => {
                for (pi, qi) in p.iter_mut().zip(q.iter_mut()) {
                    let s = if rng.random::<f64>() < 0.7 { 1.0 } else { -1.0 };
                    let t = if rng.random::<f64>() < 0.8 { 1.0 } else { -1.0 };
                    *pi = s;
                    *qi = s * t;
                }
                for vi in v.iter_mut() {
                    *vi = rng.random_range(0..3) as f64;
                }
                for i in 0..m {
                    w[i] = v[m - 1 - i];
                }
            }
        }
    }
}

/// Monte Carlo estimates of both sides of
/// `‖E(P v wᵀ Q)‖_F ≤ ‖E(v wᵀ)‖_F ‖E(vec P vec Qᵀ)‖_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma3Estimate {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
}

pub const MIN_LEMMA3_DRAWS: usize = 100_000;

pub fn lemma3_monte_carlo(
    family: Lemma3Family,
    m: usize,
    draws: usize,
    seed: u64,
) -> Result<Lemma3Estimate> {
    if m == 0 {
        return Err(Error::invalid("m", "must be >= 1"));
    }
    if draws < JACKKNIFE_GROUPS {
        return Err(Error::invalid(
            "draws",
            format!("need at least {JACKKNIFE_GROUPS} draws"),
        ));
    }
    let mm = m * m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per group: Σ P v wᵀ Q (m²), Σ v wᵀ (m²), Σ vecP vecQᵀ (m⁴)
    let mut lhs = vec![vec![0.0; mm]; JACKKNIFE_GROUPS];
    let mut vw = vec![vec![0.0; mm]; JACKKNIFE_GROUPS];
    let mut pq = vec![vec![0.0; mm * mm]; JACKKNIFE_GROUPS];
    let mut counts = [0usize; JACKKNIFE_GROUPS];
    let (mut p, mut q, mut v, mut w) = (vec![0.0; mm], vec![0.0; mm], vec![0.0; m], vec![0.0; m]);
    let (mut pv, mut wq) = (vec![0.0; m], vec![0.0; m]);
    for d in 0..draws {
        let g = d * JACKKNIFE_GROUPS / draws;
        family.draw(m, &mut rng, &mut p, &mut q, &mut v, &mut w);
        // P, Q are row-major; vec() stacks columns.
        for i in 0..m {
            pv[i] = (0..m).map(|j| p[i * m + j] * v[j]).sum();
            wq[i] = (0..m).map(|j| w[j] * q[j * m + i]).sum();
        }
        for i in 0..m {
            for j in 0..m {
                lhs[g][i * m + j] += pv[i] * wq[j];
                vw[g][i * m + j] += v[i] * w[j];
            }
        }
        let acc = &mut pq[g];
        for a in 0..mm {
            let pa = p[(a % m) * m + a / m];
            let row = &mut acc[a * mm..(a + 1) * mm];
            for (b, r) in row.iter_mut().enumerate() {
                *r += pa * q[(b % m) * m + b / m];
            }
        }
        counts[g] += 1;
    }

    let sides = |skip: Option<usize>| -> (f64, f64) {
        let mut n = 0usize;
        let mut l = vec![0.0; mm];
        let mut x = vec![0.0; mm];
        let mut y = vec![0.0; mm * mm];
        for g in 0..JACKKNIFE_GROUPS {
            if skip == Some(g) {
                continue;
            }
            n += counts[g];
            l.iter_mut().zip(&lhs[g]).for_each(|(a, b)| *a += b);
            x.iter_mut().zip(&vw[g]).for_each(|(a, b)| *a += b);
            y.iter_mut().zip(&pq[g]).for_each(|(a, b)| *a += b);
        }
        let s = 1.0 / n as f64;
        (norm2(&l) * s, norm2(&x) * s * norm2(&y) * s)
    };
    let (l, r) = sides(None);
    let loo: Vec<(f64, f64)> = (0..JACKKNIFE_GROUPS).map(|g| sides(Some(g))).collect();
    Ok(Lemma3Estimate {
        lhs: l,
        lhs_se: jackknife_se(&loo.iter().map(|e| e.0).collect::<Vec<_>>()),
        rhs: r,
        rhs_se: jackknife_se(&loo.iter().map(|e| e.1).collect::<Vec<_>>()),
    })
}

/// Passes when `LHS ≤ RHS + 3·√(SE_L² + SE_R²)` for every family.
pub fn verify_lemma3(
    families: &[Lemma3Family],
    m: usize,
    draws: usize,
    seed: u64,
) -> Result<LemmaReport> {
    if draws < MIN_LEMMA3_DRAWS {
        return Err(Error::invalid(
            "draws",
            format!("need at least {MIN_LEMMA3_DRAWS} draws"),
        ));
    }
    let details = families
        .iter()
        .enumerate()
        .map(|(i, &fam)| {
            let e =
                lemma3_monte_carlo(fam, m, draws, crate::sampling::derive_seed(seed, i as u64))?;
            let se = e.lhs_se.hypot(e.rhs_se);
            Ok(TrialDetail {
                label: format!("{fam:?} M={m} draws={draws} se={se:e}"),
                lhs: e.lhs,
                rhs: e.rhs,
                violation: e.lhs - e.rhs - 3.0 * se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::from_details("lemma3", details, 0.0, vec![]))
}

/// One equally likely batch: its Gram `A_k` and moment `b^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedBatch {
    pub a: Matrix,
    pub b: Vec<f64>,
}

/// Every ordered `n`-tuple of `points` as an equally likely batch with
/// outputs `f(x)` (no noise). Only memoryless families are allowed.
pub fn enumerate_batches(
    points: &[f64],
    n: usize,
    basis: &BasisFamily,
    f: impl Fn(f64) -> f64,
) -> Result<Vec<EnumeratedBatch>> {
    if matches!(basis, BasisFamily::MemoryTapped(_)) {
        return Err(Error::UnsupportedFamily("MemoryTapped"));
    }
    if points.is_empty() || n == 0 {
        return Err(Error::EmptyBatch);
    }
    let count = points.len().checked_pow(n as u32).filter(|&c| c <= 1 << 20);
    let Some(count) = count else {
        return Err(Error::invalid("n", "too many batches to enumerate"));
    };
    let m = basis.len();
    let mut out = Vec::with_capacity(count);
    for mut code in 0..count {
        let mut ne = crate::engine::NormalEquations::new(m);
        for _ in 0..n {
            let x = points[code % points.len()];
            code /= points.len();
            ne.add_dense_row(&basis.eval_row(&[x], 0), f(x));
        }
        let (a, b) = ne.finish();
        out.push(EnumeratedBatch { a, b });
    }
    Ok(out)
}

/// Both sides of the one-step second-moment recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma2Terms {
    /// `E(e^k e^kᵀ)` by exhaustive enumeration of the update.
    pub exhaustive: Matrix,
    /// The seven-term expansion with the cross-term signs that follow from
    /// the error recursion.
    pub recursion: Matrix,
    /// The same expansion with all four cross-term signs flipped.
    pub recursion_flipped: Matrix,
    pub max_abs_diff: f64,
    pub flipped_max_abs_diff: f64,
}

/// Exhaustive check of
/// `E(e^k e^kᵀ) = (I−μΨA)E(eeᵀ)(I−μAΨ) + μ²Ψ[E(ηηᵀ) + E(ΩeeᵀΩ) − E(Ωeθᵀ)
///   + E(ΩeûᵀΩ) − E(θeᵀΩ) + E(ΩûeᵀΩ)]Ψ` with `η = θ − Ωû`,
/// where `e = e^{k−1}` ranges over `prior` (probability, vector) independently
/// of the batch, `A`, `b` are the exact batch means and `û = A⁻¹b`.
pub fn lemma2_check(
    batches: &[EnumeratedBatch],
    prior: &[(f64, Vec<f64>)],
    psi: &Matrix,
    mu: f64,
) -> Result<Lemma2Terms> {
    if batches.is_empty() || prior.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let m = psi.rows();
    let w = 1.0 / batches.len() as f64;
    let mut a = Matrix::zeros(m, m);
    let mut b = vec![0.0; m];
    for bt in batches {
        a = a.add_scaled(w, &bt.a)?;
        b.iter_mut().zip(&bt.b).for_each(|(x, y)| *x += w * y);
    }
    let u_hat = factorize_spd(&a)?.solve(&b)?;

    let mut exhaustive = Matrix::zeros(m, m);
    let mut eet = Matrix::zeros(m, m);
    let mut t_eta = Matrix::zeros(m, m);
    let mut t_oeeo = Matrix::zeros(m, m);
    let mut t_oet = Matrix::zeros(m, m);
    let mut t_oeuo = Matrix::zeros(m, m);
    let mut t_teo = Matrix::zeros(m, m);
    let mut t_oueo = Matrix::zeros(m, m);
    for (pe, e) in prior {
        eet = eet.add_scaled(*pe, &outer(e, e))?;
        let u_prev: Vec<f64> = u_hat.iter().zip(e).map(|(u, x)| u + x).collect();
        for bt in batches {
            let pw = pe * w;
            // actual update
            let au = bt.a.matvec(&u_prev)?;
            let g: Vec<f64> = bt.b.iter().zip(&au).map(|(x, y)| x - y).collect();
            let step = psi.matvec(&g)?;
            let ek: Vec<f64> = u_prev
                .iter()
                .zip(&step)
                .zip(&u_hat)
                .map(|((u, s), h)| u + mu * s - h)
                .collect();
            exhaustive = exhaustive.add_scaled(pw, &outer(&ek, &ek))?;

            let omega = bt.a.sub(&a)?;
            let theta: Vec<f64> = bt.b.iter().zip(&b).map(|(x, y)| x - y).collect();
            let oe = omega.matvec(e)?;
            let ou = omega.matvec(&u_hat)?;
            let eta: Vec<f64> = theta.iter().zip(&ou).map(|(t, o)| t - o).collect();
            let eo = omega.tr_matvec(e)?;
            let uo = omega.tr_matvec(&u_hat)?;
            t_eta = t_eta.add_scaled(pw, &outer(&eta, &eta))?;
            t_oeeo = t_oeeo.add_scaled(pw, &outer(&oe, &eo))?;
            t_oet = t_oet.add_scaled(pw, &outer(&oe, &theta))?;
            t_oeuo = t_oeuo.add_scaled(pw, &outer(&oe, &uo))?;
            t_teo = t_teo.add_scaled(pw, &outer(&theta, &eo))?;
            t_oueo = t_oueo.add_scaled(pw, &outer(&ou, &eo))?;
        }
    }

    let t = Matrix::identity(m).add_scaled(-mu, &psi.matmul(&a)?)?;
    let first = t.matmul(&eet)?.matmul(&t.transpose())?;
    let sandwich =
        |x: &Matrix| -> Result<Matrix> { Ok(psi.matmul(x)?.matmul(psi)?.scaled(mu * mu)) };
    let common = t_eta.add(&t_oeeo)?;
    let cross = t_oeuo.add(&t_oueo)?.sub(&t_oet)?.sub(&t_teo)?;
    let recursion = first.add(&sandwich(&common.add(&cross)?)?)?;
    let recursion_flipped = first.add(&sandwich(&common.sub(&cross)?)?)?;
    let max_abs_diff = exhaustive.sub(&recursion)?.max_abs();
    let flipped_max_abs_diff = exhaustive.sub(&recursion_flipped)?.max_abs();
    Ok(Lemma2Terms {
        exhaustive,
        recursion,
        recursion_flipped,
        max_abs_diff,
        flipped_max_abs_diff,
    })
}

/// `(B + γC)⁻¹` as a dense matrix (small dimensions only).
pub fn dense_inverse(p: &Matrix) -> Result<Matrix> {
    factorize_spd(p)?.solve_matrix(&Matrix::identity(p.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemma1_b_equals_a_and_diagonal() {
        let a = Matrix::from_rows(&[[3.0, 1.0], [1.0, 2.0]]);
        let z = Matrix::zeros(2, 2);
        let rep = verify_lemma1(&a, &a, &z, &[0.0], &[1.0]).unwrap();
        assert!(rep.pass);
        assert!(rep.details[0].lhs < 1e-12);

        let d = Matrix::from_diag(&[4.0, 1.0]);
        let rep = verify_lemma1(&d, &Matrix::identity(2), &z, &[0.0], &[1.0]).unwrap();
        assert!(rep.pass);
        assert!(rep.details[0].lhs <= (1.0 - 1.0 / 16.0f64).sqrt() + 1e-12);
        assert!(verify_lemma1(&d, &Matrix::identity(2), &z, &[0.0], &[1.5]).is_err());
    }

    #[test]
    fn counterexample_passes() {
        let r = counterexample_check().unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn lemma3_scalar_equality() {
        // M = 1 with everything independent: both sides are |E(pq)E(vw)|.
        let e = lemma3_monte_carlo(Lemma3Family::Uniform, 1, 20_000, 3).unwrap();
        assert!(e.lhs <= e.rhs + 3.0 * e.lhs_se.hypot(e.rhs_se));
    }

    #[test]
    fn enumerate_counts() {
        let basis = BasisFamily::monomial(2, 0.0, 1.0).unwrap();
        let batches = enumerate_batches(&[0.2, 0.5, 0.8], 2, &basis, |x| x * x).unwrap();
        assert_eq!(batches.len(), 9);
        assert!((batches[0].a[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((batches[0].a[(1, 1)] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn dense_inverse_round_trip() {
        let c = constraint_gram(&ConstraintOperator::first_difference(3).unwrap(), 1).unwrap();
        let p = Matrix::identity(3).add_scaled(0.5, &c).unwrap();
        let back = p.matmul(&dense_inverse(&p).unwrap()).unwrap();
        assert!(back.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-14);
    }
}
