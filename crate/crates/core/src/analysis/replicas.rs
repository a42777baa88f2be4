//! Cross-replica statistics of the error `e^k = u^k − û`, the mean
//! convergence checks, and the mean-square bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CovarianceDiagnostics, LemmaReport, TrialDetail};
use crate::engine::{replica_checkpoints, RunConfig, StepSchedule};
use crate::error::{Error, Result};
use crate::numerics::norm2;
use crate::regularization::Lemma1Params;

pub const MIN_THEOREM1_REPLICAS: usize = 1000;

const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointStats {
    pub k: u64,
    /// Replica mean of `e^k` and its per-coordinate standard error.
    pub mean_error: Vec<f64>,
    pub mean_error_se: Vec<f64>,
    /// `‖mean(e^k)‖`
    pub mean_error_norm: f64,
    /// `mean(‖e^k‖)` and its standard error.
    pub mean_norm: f64,
    pub mean_norm_se: f64,
    /// `‖mean(e^k e^kᵀ)‖_F` and its bootstrap standard error.
    pub second_moment: f64,
    pub second_moment_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaStudy {
    pub replicas: usize,
    pub checkpoints: Vec<CheckpointStats>,
}

/// Runs `replicas` seeded copies of `config` and summarizes `u^k − û` at
/// each checkpoint.
pub fn replica_study(
    config: &RunConfig,
    u_hat: &[f64],
    replicas: usize,
    checkpoints: &[u64],
    bootstrap_seed: u64,
) -> Result<ReplicaStudy> {
    let iterates = replica_checkpoints(config, replicas, checkpoints)?;
    let errors: Vec<Vec<Vec<f64>>> = iterates
        .into_iter()
        .map(|per| {
            per.into_iter()
                .map(|u| u.iter().zip(u_hat).map(|(a, b)| a - b).collect())
                .collect()
        })
        .collect();
    summarize_replicas(&errors, checkpoints, bootstrap_seed)
}

fn second_moment_fro(errors: &[&[f64]]) -> f64 {
    let m = errors[0].len();
    let mut acc = vec![0.0; m * m];
    for e in errors {
        for i in 0..m {
            for j in 0..m {
                acc[i * m + j] += e[i] * e[j];
            }
        }
    }
    norm2(&acc) / errors.len() as f64
}

/// Summaries from errors indexed `[replica][checkpoint]`.
pub fn summarize_replicas(
    errors: &[Vec<Vec<f64>>],
    checkpoints: &[u64],
    bootstrap_seed: u64,
) -> Result<ReplicaStudy> {
    let r = errors.len();
    if r < 2 {
        return Err(Error::invalid("replicas", "need at least 2 replicas"));
    }
    if errors.iter().any(|e| e.len() != checkpoints.len()) {
        return Err(Error::DimensionMismatch {
            expected: checkpoints.len(),
            found: errors
                .iter()
                .map(|e| e.len())
                .find(|&l| l != checkpoints.len())
                .unwrap_or(0),
        });
    }
    let rf = r as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(bootstrap_seed);
    let resamples: Vec<Vec<usize>> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..r).map(|_| rng.random_range(0..r)).collect())
        .collect();

    let stats = checkpoints
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let es: Vec<&[f64]> = errors.iter().map(|e| e[c].as_slice()).collect();
            let m = es[0].len();
            let mean: Vec<f64> = (0..m)
                .map(|i| es.iter().map(|e| e[i]).sum::<f64>() / rf)
                .collect();
            let se: Vec<f64> = (0..m)
                .map(|i| {
                    let v = es.iter().map(|e| (e[i] - mean[i]).powi(2)).sum::<f64>() / (rf - 1.0);
                    (v / rf).sqrt()
                })
                .collect();
            let norms: Vec<f64> = es.iter().map(|e| norm2(e)).collect();
            let mean_norm = norms.iter().sum::<f64>() / rf;
            let var_norm = norms.iter().map(|n| (n - mean_norm).powi(2)).sum::<f64>() / (rf - 1.0);
            let second = second_moment_fro(&es);
            let boots: Vec<f64> = resamples
                .iter()
                .map(|idx| second_moment_fro(&idx.iter().map(|&i| es[i]).collect::<Vec<_>>()))
                .collect();
            let bm = boots.iter().sum::<f64>() / boots.len() as f64;
            let bse = (boots.iter().map(|b| (b - bm).powi(2)).sum::<f64>()
                / (boots.len() - 1) as f64)
                .sqrt();
            CheckpointStats {
                k,
                mean_error_norm: norm2(&mean),
                mean_error: mean,
                mean_error_se: se,
                mean_norm,
                mean_norm_se: (var_norm / rf).sqrt(),
                second_moment: second,
                second_moment_se: bse,
            }
        })
        .collect();
    Ok(ReplicaStudy {
        replicas: r,
        checkpoints: stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MeanCheck {
    /// `‖mean(e^k)‖ ≤ 4 · max_i SE_i · √M` at the first checkpoint; for the
    /// `B = A`, `μ = 1` configuration whose first-step mean error is zero.
    FirstStep,
    /// `‖mean(e^k)‖` strictly decreases over the listed checkpoints.
    Decreasing(Vec<u64>),
}

pub fn verify_theorem1_mean(study: &ReplicaStudy, check: &MeanCheck) -> Result<LemmaReport> {
    if study.replicas < MIN_THEOREM1_REPLICAS {
        return Err(Error::invalid(
            "replicas",
            format!("need at least {MIN_THEOREM1_REPLICAS} replicas"),
        ));
    }
    let details = match check {
        MeanCheck::FirstStep => {
            let c = study.checkpoints.first().ok_or(Error::EmptyBatch)?;
            let m = c.mean_error.len() as f64;
            let se = c.mean_error_se.iter().copied().fold(0.0, f64::max);
            let rhs = 4.0 * se * m.sqrt();
            vec![TrialDetail {
                label: format!("k={}", c.k),
                lhs: c.mean_error_norm,
                rhs,
                violation: c.mean_error_norm - rhs,
            }]
        }
        MeanCheck::Decreasing(ks) => {
            let picked: Vec<&CheckpointStats> =
                ks.iter()
                    .map(|k| {
                        study.checkpoints.iter().find(|c| c.k == *k).ok_or_else(|| {
                            Error::invalid("checkpoints", format!("k={k} not in study"))
                        })
                    })
                    .collect::<Result<_>>()?;
            strictly_decreasing(&picked, |c| c.mean_error_norm)
        }
    };
    Ok(LemmaReport::from_details("theorem1", details, 0.0, vec![]))
}

fn strictly_decreasing(
    cs: &[&CheckpointStats],
    value: impl Fn(&CheckpointStats) -> f64,
) -> Vec<TrialDetail> {
    cs.windows(2)
        .map(|w| {
            let (a, b) = (value(w[0]), value(w[1]));
            TrialDetail {
                label: format!("k={} -> k={}", w[0].k, w[1].k),
                lhs: b,
                rhs: a,
                // strict decrease: b < a
                violation: if b < a {
                    b - a
                } else {
                    f64::max(b - a, f64::MIN_POSITIVE)
                },
            }
        })
        .collect()
}

/// Replica mean of `‖e^k‖` strictly decreasing across every checkpoint.
pub fn mean_norm_monotone(study: &ReplicaStudy) -> LemmaReport {
    let cs: Vec<&CheckpointStats> = study.checkpoints.iter().collect();
    LemmaReport::from_details(
        "mean_norm_monotone",
        strictly_decreasing(&cs, |c| c.mean_norm),
        0.0,
        vec![],
    )
}

/// Constants of the mean-square bound
/// `R_k = (1 − μ_k λ0)² R_{k−1} + δ² d² μ_k²`, `R_0 = ‖û‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceBound {
    pub lambda: f64,
    pub lambda0: f64,
    pub d: f64,
    pub u_hat_norm: f64,
    pub delta2: f64,
    /// `min{4λ/(3λ² + 4σ²_ΩΩ), μ0}`
    pub mu_hat0_printed: f64,
    /// `min{λ/(3λ²/4 + σ²_ΩΩ d²), μ0}`, under which the one-step
    /// contraction `(1−μλ)² + μ²σ²_ΩΩ d² ≤ (1 − μλ/2)²` holds.
    pub mu_hat0_with_d: f64,
    /// The smaller of the two; used by [`VarianceBound::schedule`].
    pub mu_hat0: f64,
}

impl VarianceBound {
    /// `u⁰ = 0`, so `E(e⁰) = −û` and `‖E(e⁰e⁰ᵀ)‖_F = ‖û‖²`.
    pub fn new(
        params: &Lemma1Params,
        cov: &CovarianceDiagnostics,
        d: f64,
        u_hat_norm: f64,
    ) -> Self {
        let l = params.lambda;
        let (stt, soo, sto) = (
            cov.sigma_theta_theta,
            cov.sigma_omega_omega,
            cov.sigma_theta_omega,
        );
        let printed = (4.0 * l / (3.0 * l * l + 4.0 * soo)).min(params.mu0);
        let with_d = (l / (0.75 * l * l + soo * d * d)).min(params.mu0);
        let u = u_hat_norm;
        let delta2 = stt + 2.0 * sto * u + soo * u * u + 2.0 * (soo * u + sto) * u;
        Self {
            lambda: l,
            lambda0: l / 2.0,
            d,
            u_hat_norm,
            delta2,
            mu_hat0_printed: printed,
            mu_hat0_with_d: with_d,
            mu_hat0: printed.min(with_d),
        }
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule::InverseDecay {
            lambda0: self.lambda0,
            mu_hat0: self.mu_hat0,
        }
    }

    /// `R_1, …, R_steps`.
    pub fn sequence(&self, schedule: &StepSchedule, steps: u64) -> Vec<f64> {
        let mut r = self.u_hat_norm * self.u_hat_norm;
        let c = self.delta2 * self.d * self.d;
        (1..=steps)
            .map(|k| {
                let mu = schedule.value(k);
                r = (1.0 - mu * self.lambda0).powi(2) * r + c * mu * mu;
                r
            })
            .collect()
    }
}

/// Empirical `‖mean(e^k e^kᵀ)‖_F ≤ R_k + 3·SE` at every checkpoint, plus the
/// step-size hypothesis flags.
pub fn variance_bound_check(
    study: &ReplicaStudy,
    bound: &VarianceBound,
    schedule: &StepSchedule,
) -> Result<LemmaReport> {
    let last = study
        .checkpoints
        .iter()
        .map(|c| c.k)
        .max()
        .ok_or(Error::EmptyBatch)?;
    let seq = bound.sequence(schedule, last);
    let details = study
        .checkpoints
        .iter()
        .map(|c| {
            let rhs = seq[(c.k - 1) as usize];
            TrialDetail {
                label: format!("k={} se={:e}", c.k, c.second_moment_se),
                lhs: c.second_moment,
                rhs,
                violation: c.second_moment - rhs - 3.0 * c.second_moment_se,
            }
        })
        .collect();
    let max_mu = (1..=last.min(1 << 20))
        .map(|k| schedule.value(k))
        .fold(0.0, f64::max);
    let mut notes = vec![
        format!("sum_mu_diverges={}", schedule.sum_diverges()),
        format!("sum_mu_squared_finite={}", schedule.square_summable()),
        format!(
            "step_hypothesis_holds={}",
            schedule.sum_diverges() && schedule.square_summable()
        ),
        format!("max_mu={max_mu:e} mu_hat0={:e}", bound.mu_hat0),
        format!(
            "mu_hat0_printed={:e} mu_hat0_with_d={:e}",
            bound.mu_hat0_printed, bound.mu_hat0_with_d
        ),
    ];
    if bound.mu_hat0_printed > bound.mu_hat0_with_d {
        notes.push(
            "printed mu_hat0 exceeds the d-inclusive limit; the smaller value is used".into(),
        );
    }
    if max_mu > bound.mu_hat0 * (1.0 + 1e-12) {
        notes.push("schedule exceeds mu_hat0; bound hypotheses not met".into());
    }
    Ok(LemmaReport::from_details("variance", details, 0.0, notes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, mu0: f64) -> Lemma1Params {
        Lemma1Params {
            lambda_min: lambda,
            lambda_max: lambda,
            tau: 1.0,
            lambda,
            mu0,
            branch: crate::regularization::TauBranch::AtLeastOne,
        }
    }

    fn zero_cov() -> CovarianceDiagnostics {
        CovarianceDiagnostics {
            sigma_theta_theta: 0.0,
            sigma_omega_omega: 0.0,
            sigma_theta_omega: 0.0,
            sigma_theta_theta_se: 0.0,
            sigma_omega_omega_se: 0.0,
            sigma_theta_omega_se: 0.0,
            n: 1,
            replicas: 100,
        }
    }

    #[test]
    fn zero_variance_bound_is_pure_decay() {
        let b = VarianceBound::new(&params(1.0, 1.0), &zero_cov(), 2.0, 3.0);
        assert_eq!(b.delta2, 0.0);
        let s = StepSchedule::Constant { mu: 0.5 };
        let seq = b.sequence(&s, 3);
        for (k, r) in seq.iter().enumerate() {
            assert!((r - 9.0 * 0.75f64.powi(2 * (k as i32 + 1))).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_recursion() {
        let mut cov = zero_cov();
        cov.sigma_theta_theta = 0.3;
        cov.sigma_omega_omega = 0.2;
        cov.sigma_theta_omega = 0.1;
        let b = VarianceBound::new(&params(0.8, 0.9), &cov, 1.5, 2.0);
        let s = b.schedule();
        let k = 7u64;
        let seq = b.sequence(&s, k);
        let mu = |j: u64| s.value(j);
        let mut closed = 4.0
            * (1..=k)
                .map(|j| (1.0 - mu(j) * b.lambda0).powi(2))
                .product::<f64>();
        let mut tail = 0.0;
        for j in 1..=k {
            let prod: f64 = (2..=j)
                .map(|i| (1.0 - mu(k - i + 2) * b.lambda0).powi(2))
                .product();
            tail += prod * mu(k - j + 1).powi(2);
        }
        closed += b.delta2 * b.d * b.d * tail;
        assert!((seq[(k - 1) as usize] - closed).abs() < 1e-12 * closed);
    }

    #[test]
    fn mu_hat0_variants_and_contraction() {
        let mut cov = zero_cov();
        cov.sigma_omega_omega = 0.4;
        let p = params(0.6, 10.0);
        let b = VarianceBound::new(&p, &cov, 2.0, 1.0);
        assert!((b.mu_hat0_printed - 4.0 * 0.6 / (3.0 * 0.36 + 1.6)).abs() < 1e-15);
        assert!((b.mu_hat0_with_d - 0.6 / (0.27 + 1.6)).abs() < 1e-15);
        let mu = b.mu_hat0;
        let lhs = (1.0 - mu * 0.6).powi(2) + mu * mu * 0.4 * 4.0;
        assert!(lhs <= (1.0 - mu * 0.3).powi(2) + 1e-15);
    }

    #[test]
    fn constant_schedule_flags_violation() {
        let study = ReplicaStudy {
            replicas: 2,
            checkpoints: vec![],
        };
        let b = VarianceBound::new(&params(1.0, 1.0), &zero_cov(), 1.0, 1.0);
        assert!(variance_bound_check(&study, &b, &StepSchedule::Constant { mu: 0.1 }).is_err());
        let errors = vec![vec![vec![0.1, 0.0]], vec![vec![-0.1, 0.0]]];
        let study = summarize_replicas(&errors, &[1], 0).unwrap();
        let rep = variance_bound_check(&study, &b, &StepSchedule::Constant { mu: 0.1 }).unwrap();
        assert!(rep.notes.iter().any(|n| n == "sum_mu_squared_finite=false"));
    }
}
