//! Ground-truth oracle, error metrics, batch covariance diagnostics, and
//! numerical verifiers for the convergence results.

mod lemmas;
mod replicas;

pub use lemmas::{
    counterexample_check, dense_inverse, enumerate_batches, lemma1_random_suite, lemma2_check,
    lemma3_monte_carlo, random_spd, verify_lemma1, verify_lemma3, EnumeratedBatch, Lemma2Terms,
    Lemma3Estimate, Lemma3Family, MIN_LEMMA3_DRAWS,
};
pub use replicas::{
    mean_norm_monotone, replica_study, summarize_replicas, variance_bound_check,
    verify_theorem1_mean, CheckpointStats, MeanCheck, ReplicaStudy, VarianceBound,
    MIN_THEOREM1_REPLICAS,
};

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::BasisFamily;
use crate::engine::NormalEquations;
use crate::error::{Error, Result};
use crate::numerics::{factorize_spd, norm2, Matrix};
use crate::sampling::{derive_seed, draw_batch, ProcessSpec, TargetFunction};

/// Groups used for every jackknife standard error in this module.
pub const JACKKNIFE_GROUPS: usize = 20;

const ORACLE_CHUNK: usize = 10_000;
const ORACLE_STREAM: u64 = 0x0AC1_E000;
const COVARIANCE_STREAM: u64 = 0xC0FA_0000;

/// Large-sample estimate of `A`, `b` and `û = A⁻¹b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub u_hat: Vec<f64>,
    pub a: Matrix,
    pub b: Vec<f64>,
    pub sample_count: usize,
    /// Jackknife standard error per coefficient.
    pub u_se: Vec<f64>,
    /// `E((Φû − y)²)` and its standard error.
    pub residual_ms: f64,
    pub residual_ms_se: f64,
}

#[derive(Clone)]
struct Accum {
    ne: NormalEquations,
    yy: f64,
}

impl Accum {
    fn solve(&self) -> Result<(Vec<f64>, f64, Matrix, Vec<f64>)> {
        let (a, b) = self.ne.finish();
        let u = factorize_spd(&a)?.solve(&b)?;
        let au = a.matvec(&u)?;
        let n = self.ne.count() as f64;
        let ms = self.yy / n - 2.0 * crate::numerics::dot(&u, &b) + crate::numerics::dot(&u, &au);
        Ok((u, ms, a, b))
    }
}

pub(crate) fn jackknife_se(estimates: &[f64]) -> f64 {
    let g = estimates.len() as f64;
    if estimates.len() < 2 {
        return 0.0;
    }
    let mean = estimates.iter().sum::<f64>() / g;
    ((g - 1.0) / g
        * estimates
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>())
    .sqrt()
}

/// Streams `sample_count` samples (on a stream separate from any run's
/// batches) into `A` and `b`, then solves for `û`.
pub fn oracle_best_approx(
    p: &ProcessSpec,
    f: &TargetFunction,
    basis: &BasisFamily,
    sample_count: usize,
) -> Result<OracleSolution> {
    if sample_count < 10_000 {
        return Err(Error::invalid(
            "sample_count",
            "oracle needs at least 10^4 samples",
        ));
    }
    let m = basis.len();
    let ctx = basis.context();
    let stream = p.with_seed(derive_seed(p.seed, ORACLE_STREAM));
    let chunk = ORACLE_CHUNK.min(sample_count.div_ceil(JACKKNIFE_GROUPS));
    let chunks = sample_count.div_ceil(chunk);

    let groups: Vec<Accum> = (0..JACKKNIFE_GROUPS)
        .into_par_iter()
        .map(|g| {
            let mut acc = Accum {
                ne: NormalEquations::new(m),
                yy: 0.0,
            };
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for c in (g..chunks).step_by(JACKKNIFE_GROUPS) {
                let size = chunk.min(sample_count - c * chunk);
                let batch = draw_batch(&stream, f, size, c as u64, ctx);
                for n in 0..size {
                    cols.clear();
                    vals.clear();
                    basis.eval_sparse(&batch.inputs, batch.position(n), &mut cols, &mut vals);
                    let y = batch.outputs[n];
                    acc.ne.add_row(&cols, &vals, y);
                    acc.yy += y * y;
                }
            }
            acc
        })
        .collect();

    let mut total = Accum {
        ne: NormalEquations::new(m),
        yy: 0.0,
    };
    for g in &groups {
        total.ne.merge(&g.ne);
        total.yy += g.yy;
    }
    let (u_hat, residual_ms, a, b) = total.solve()?;

    let loo: Vec<(Vec<f64>, f64)> = groups
        .iter()
        .map(|g| {
            let rest = Accum {
                ne: total.ne.without(&g.ne),
                yy: total.yy - g.yy,
            };
            rest.solve().map(|(u, ms, _, _)| (u, ms))
        })
        .collect::<Result<_>>()?;
    let u_se = (0..m)
        .map(|i| jackknife_se(&loo.iter().map(|(u, _)| u[i]).collect::<Vec<_>>()))
        .collect();
    let residual_ms_se = jackknife_se(&loo.iter().map(|(_, ms)| *ms).collect::<Vec<_>>());

    Ok(OracleSolution {
        u_hat,
        a,
        b,
        sample_count,
        u_se,
        residual_ms,
        residual_ms_se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub e_norm: f64,
    pub relative_error: f64,
}

/// `‖u − û‖` and `‖u − û‖ / ‖û‖`.
pub fn error_metrics(u: &[f64], o: &OracleSolution) -> Result<ErrorMetrics> {
    relative_to(u, &o.u_hat)
}

pub fn relative_to(u: &[f64], u_hat: &[f64]) -> Result<ErrorMetrics> {
    if u.len() != u_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: u_hat.len(),
            found: u.len(),
        });
    }
    let scale = norm2(u_hat);
    if scale == 0.0 {
        return Err(Error::ZeroOracle);
    }
    let e: Vec<f64> = u.iter().zip(u_hat).map(|(a, b)| a - b).collect();
    let e_norm = norm2(&e);
    Ok(ErrorMetrics {
        e_norm,
        relative_error: e_norm / scale,
    })
}

/// Frobenius norms of the batch-statistic covariances. The `sigma_*` fields
/// hold the squared quantities `σ²` directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceDiagnostics {
    pub sigma_theta_theta: f64,
    pub sigma_omega_omega: f64,
    pub sigma_theta_omega: f64,
    pub sigma_theta_theta_se: f64,
    pub sigma_omega_omega_se: f64,
    pub sigma_theta_omega_se: f64,
    pub n: usize,
    pub replicas: usize,
}

/// Monte Carlo estimates of `‖E(θθᵀ)‖_F`, `‖E(vecΩ vecΩᵀ)‖_F` and
/// `‖E(vecΩ θᵀ)‖_F` from `replicas` independent batches of size `n`.
///
/// Deviations are centered on the replica means. The Frobenius norms are
/// evaluated through replica inner products,
/// `‖Σ_r z_r z_rᵀ‖_F² = Σ_{r,s} (z_r·z_s)²`, so the `M²×M²` covariance of
/// `vec Ω` is never formed.
pub fn estimate_covariances(
    p: &ProcessSpec,
    f: &TargetFunction,
    basis: &BasisFamily,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<CovarianceDiagnostics> {
    if replicas < 100 {
        return Err(Error::invalid("replicas", "need at least 100 replicas"));
    }
    if n == 0 {
        return Err(Error::invalid("n", "batch size must be >= 1"));
    }
    let m = basis.len();
    let ctx = basis.context();
    let stream = p.with_seed(derive_seed(seed, COVARIANCE_STREAM));
    let stats: Vec<(Vec<f64>, Vec<f64>)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let batch = draw_batch(&stream, f, n, r as u64 + 1, ctx);
            let mut ne = NormalEquations::new(m);
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for i in 0..n {
                cols.clear();
                vals.clear();
                basis.eval_sparse(&batch.inputs, batch.position(i), &mut cols, &mut vals);
                ne.add_row(&cols, &vals, batch.outputs[i]);
            }
            let (a, b) = ne.finish();
            (a.as_slice().to_vec(), b)
        })
        .collect();

    type Stat = (Vec<f64>, Vec<f64>);
    let center = |sel: fn(&Stat) -> &Vec<f64>| -> Vec<Vec<f64>> {
        let dim = sel(&stats[0]).len();
        let mut mean = vec![0.0; dim];
        for s in &stats {
            for (m, v) in mean.iter_mut().zip(sel(s)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= replicas as f64);
        stats
            .iter()
            .map(|s| sel(s).iter().zip(&mean).map(|(v, m)| v - m).collect())
            .collect()
    };
    let zo = center(|s| &s.0);
    let zt = center(|s| &s.1);

    // Block sums over replica groups of the three pair kernels.
    let g = JACKKNIFE_GROUPS.min(replicas);
    let group_of = |r: usize| r * g / replicas;
    let mut sums = vec![[0.0f64; 3]; g * g];
    for r in 0..replicas {
        let gr = group_of(r);
        for s in 0..replicas {
            let go = crate::numerics::dot(&zo[r], &zo[s]);
            let gt = crate::numerics::dot(&zt[r], &zt[s]);
            let cell = &mut sums[gr * g + group_of(s)];
            cell[0] += gt * gt;
            cell[1] += go * go;
            cell[2] += go * gt;
        }
    }
    let estimate = |skip: Option<usize>| -> [f64; 3] {
        let mut tot = [0.0; 3];
        for a in 0..g {
            for b in 0..g {
                if skip == Some(a) || skip == Some(b) {
                    continue;
                }
                for (t, v) in tot.iter_mut().zip(sums[a * g + b]) {
                    *t += v;
                }
            }
        }
        let count = match skip {
            Some(s) => replicas - (0..replicas).filter(|&r| group_of(r) == s).count(),
            None => replicas,
        };
        let denom = (count - 1) as f64;
        tot.map(|t| t.max(0.0).sqrt() / denom)
    };
    let full = estimate(None);
    let loo: Vec<[f64; 3]> = (0..g).map(|s| estimate(Some(s))).collect();
    let se = |i: usize| jackknife_se(&loo.iter().map(|e| e[i]).collect::<Vec<_>>());

    Ok(CovarianceDiagnostics {
        sigma_theta_theta: full[0],
        sigma_omega_omega: full[1],
        sigma_theta_omega: full[2],
        sigma_theta_theta_se: se(0),
        sigma_omega_omega_se: se(1),
        sigma_theta_omega_se: se(2),
        n,
        replicas,
    })
}

/// One evaluated trial of a verifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialDetail {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Amount by which the check fails; `≤ tolerance` passes.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub trials: usize,
    /// `+∞` (serialized as `null`) when no trial ran.
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub details: Vec<TrialDetail>,
    pub notes: Vec<String>,
}

impl LemmaReport {
    pub fn from_details(
        lemma: &str,
        details: Vec<TrialDetail>,
        tolerance: f64,
        notes: Vec<String>,
    ) -> Self {
        let max_violation = if details.is_empty() {
            f64::INFINITY
        } else {
            details
                .iter()
                .map(|d| d.violation)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        Self {
            lemma: lemma.to_string(),
            trials: details.len(),
            max_violation,
            tolerance,
            pass: max_violation <= tolerance,
            details,
            notes,
        }
    }
}
