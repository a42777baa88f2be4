//! The preconditioned stochastic gradient iteration
//! `u^k = u^{k-1} + μ_k (B + γC)⁻¹ (b^k − A_k u^{k-1})`, step-size schedules,
//! and run orchestration with trace capture.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{eval_design_at, BasisFamily, DesignMatrix};
use crate::error::{Error, Result};
use crate::numerics::{dot, factorize_spd, norm2, Matrix};
use crate::regularization::{
    assemble_preconditioner, constraint_gram, AdmissibilityReport, PreconditionerFactor,
    PreconditionerSpec,
};
use crate::sampling::{derive_seed, draw_batch, Context, ProcessSpec, TargetFunction};

/// `A_k` is formed explicitly only up to this dimension.
pub const EXPLICIT_GRAM_LIMIT: usize = 512;

/// Stream index reserved for the evaluation set.
const EVAL_STREAM: u64 = 0x0E7A_15E7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        mu: f64,
    },
    /// `μ_k = 1 / (λ0 (k − 1) + 1/μ̂0)`
    InverseDecay {
        lambda0: f64,
        mu_hat0: f64,
    },
    /// `μ0` through step `K0`, then `1 / (k − K0)`.
    SwitchAt {
        mu0: f64,
        switch_step: u64,
    },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            StepSchedule::Constant { mu } if !ok(mu) => {
                Err(Error::invalid("mu", "must be finite and > 0"))
            }
            StepSchedule::InverseDecay { lambda0, .. }
                if !(lambda0.is_finite() && lambda0 >= 0.0) =>
            {
                Err(Error::invalid("lambda0", "must be finite and >= 0"))
            }
            StepSchedule::InverseDecay { mu_hat0, .. } if !ok(mu_hat0) => {
                Err(Error::invalid("mu_hat0", "must be finite and > 0"))
            }
            StepSchedule::SwitchAt { mu0, .. } if !ok(mu0) => {
                Err(Error::invalid("mu0", "must be finite and > 0"))
            }
            _ => Ok(()),
        }
    }

    /// `μ_k` for `k ≥ 1`.
    pub fn value(&self, k: u64) -> f64 {
        debug_assert!(k >= 1, "steps are numbered from 1");
        match *self {
            StepSchedule::Constant { mu } => mu,
            StepSchedule::InverseDecay { lambda0, mu_hat0 } => {
                1.0 / (lambda0 * (k.saturating_sub(1)) as f64 + 1.0 / mu_hat0)
            }
            StepSchedule::SwitchAt { mu0, switch_step } => {
                if k <= switch_step {
                    mu0
                } else {
                    1.0 / (k - switch_step) as f64
                }
            }
        }
    }

    /// `Σ μ_k = ∞`
    pub fn sum_diverges(&self) -> bool {
        true
    }

    /// `Σ μ_k² < ∞`
    pub fn square_summable(&self) -> bool {
        match *self {
            StepSchedule::Constant { .. } => false,
            StepSchedule::InverseDecay { lambda0, .. } => lambda0 > 0.0,
            StepSchedule::SwitchAt { .. } => true,
        }
    }
}

pub fn schedule_value(s: &StepSchedule, k: u64) -> f64 {
    s.value(k)
}

/// Scaling of the stochastic gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientConvention {
    /// `(1/N) Φᵀ r`, so that `A_k → A` as N grows.
    #[default]
    Normalized,
    /// `Φᵀ r`
    Unnormalized,
}

impl GradientConvention {
    fn scale(self, n: usize) -> f64 {
        match self {
            GradientConvention::Normalized => 1.0 / n as f64,
            GradientConvention::Unnormalized => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub k: u64,
    pub u: Vec<f64>,
}

impl IterationState {
    pub fn zeros(m: usize) -> Self {
        Self {
            k: 0,
            u: vec![0.0; m],
        }
    }
}

/// `A_k`, `b^k` and `r^k` for one batch.
#[derive(Debug, Clone)]
pub struct BatchStatistics {
    /// Present when `M ≤` [`EXPLICIT_GRAM_LIMIT`].
    pub a: Option<Matrix>,
    pub b: Vec<f64>,
    pub r: Vec<f64>,
    /// `b^k − A_k u_prev = (1/N) Φᵀ r^k`
    pub gradient: Vec<f64>,
    pub n: usize,
}

pub fn batch_statistics(phi: &DesignMatrix, y: &[f64], u_prev: &[f64]) -> Result<BatchStatistics> {
    if y.len() != phi.n() {
        return Err(Error::DimensionMismatch {
            expected: phi.n(),
            found: y.len(),
        });
    }
    let n = phi.n();
    let scale = 1.0 / n as f64;
    let fitted = phi.mul_vec(u_prev)?;
    let r: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let mut b = phi.tr_mul_vec(y)?;
    b.iter_mut().for_each(|v| *v *= scale);
    let mut gradient = phi.tr_mul_vec(&r)?;
    gradient.iter_mut().for_each(|v| *v *= scale);
    let a = (phi.m() <= EXPLICIT_GRAM_LIMIT).then(|| phi.gram(scale));
    Ok(BatchStatistics {
        a,
        b,
        r,
        gradient,
        n,
    })
}

/// How `A_k u` is obtained.
pub enum GramOperator<'a> {
    Explicit(&'a Matrix),
    Product(&'a dyn Fn(&[f64]) -> Result<Vec<f64>>),
}

impl GramOperator<'_> {
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        match self {
            GramOperator::Explicit(a) => a.matvec(u),
            GramOperator::Product(f) => f(u),
        }
    }
}

fn gradient_of(state: &IterationState, b: &[f64], a: &GramOperator<'_>) -> Result<Vec<f64>> {
    if b.len() != state.u.len() {
        return Err(Error::DimensionMismatch {
            expected: state.u.len(),
            found: b.len(),
        });
    }
    let au = a.apply(&state.u)?;
    Ok(b.iter().zip(&au).map(|(bi, ai)| bi - ai).collect())
}

/// One preconditioned step from the pieces `b^k` and `A_k`.
pub fn psgm_step(
    state: &IterationState,
    b: &[f64],
    a: GramOperator<'_>,
    p: &PreconditionerFactor,
    mu: f64,
) -> Result<IterationState> {
    let g = gradient_of(state, b, &a)?;
    apply_update(state, &g, p, mu)
}

/// Plain stochastic gradient step `u + μ (b − A u)`, without a preconditioner.
pub fn sgm_step(
    state: &IterationState,
    b: &[f64],
    a: GramOperator<'_>,
    mu: f64,
) -> Result<IterationState> {
    let g = gradient_of(state, b, &a)?;
    finish(state, g.iter().map(|gi| mu * gi), state.k + 1)
}

/// `u + μ (B + γC)⁻¹ g` for a precomputed gradient `g`.
pub fn apply_update(
    state: &IterationState,
    g: &[f64],
    p: &PreconditionerFactor,
    mu: f64,
) -> Result<IterationState> {
    if !(mu > 0.0) {
        return Err(Error::invalid("mu", "step size must be > 0"));
    }
    let dir = p.apply(g)?;
    finish(state, dir.iter().map(|d| mu * d), state.k + 1)
}

fn finish(
    state: &IterationState,
    delta: impl Iterator<Item = f64>,
    k: u64,
) -> Result<IterationState> {
    let u: Vec<f64> = state.u.iter().zip(delta).map(|(u, d)| u + d).collect();
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteUpdate { step: k as usize });
    }
    Ok(IterationState { k, u })
}

/// `u_prev + (A_k + γC)⁻¹ (b^k − A_k u_prev)`; with `u_prev = 0` this is the
/// per-batch least-squares solution.
pub fn batch_least_squares(
    stats: &BatchStatistics,
    u_prev: &[f64],
    gamma: f64,
    c: Option<&Matrix>,
) -> Result<Vec<f64>> {
    let a = stats
        .a
        .as_ref()
        .ok_or_else(|| Error::invalid("stats", "explicit A_k required for a batch solve"))?;
    if u_prev.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            found: u_prev.len(),
        });
    }
    let lhs = match c {
        Some(c) if gamma != 0.0 => a.add_scaled(gamma, c)?,
        _ => a.clone(),
    };
    let delta = factorize_spd(&lhs)?.solve(&stats.gradient)?;
    Ok(u_prev.iter().zip(&delta).map(|(u, d)| u + d).collect())
}

/// Fixed evaluation set for the error-dB metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub samples: usize,
    /// Evaluate every this many steps (and always at the last step).
    pub every: u64,
}

#[derive(Debug, Clone)]
pub struct EvalSet {
    pub design: DesignMatrix,
    pub y: Vec<f64>,
    energy: f64,
}

impl EvalSet {
    pub fn draw(
        process: &ProcessSpec,
        target: &TargetFunction,
        basis: &BasisFamily,
        samples: usize,
    ) -> Result<Self> {
        let p = process.with_seed(derive_seed(process.seed, EVAL_STREAM));
        let batch = draw_batch(&p, target, samples, 0, basis.context());
        let design = eval_design_at(basis, &batch.inputs, batch.context.lead, batch.len())?;
        let energy = dot(&batch.outputs, &batch.outputs);
        Ok(Self {
            design,
            y: batch.outputs,
            energy,
        })
    }

    /// `10 log10(Σ (y − Φu)² / Σ y²)`
    pub fn error_db(&self, u: &[f64]) -> Result<f64> {
        let fit = self.design.mul_vec(u)?;
        let err: f64 = self
            .y
            .iter()
            .zip(&fit)
            .map(|(y, f)| (y - f) * (y - f))
            .sum();
        Ok(10.0 * (err / self.energy).log10())
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub process: ProcessSpec,
    pub target: TargetFunction,
    pub basis: BasisFamily,
    pub preconditioner: PreconditionerSpec,
    pub gamma: f64,
    pub schedule: StepSchedule,
    pub batch_size: usize,
    pub steps: u64,
    /// Replaces the process seed.
    pub seed: u64,
    /// Starting iterate; zero when absent.
    pub u0: Option<Vec<f64>>,
    pub convention: GradientConvention,
    /// `û`, enabling the relative-error column.
    pub reference: Option<Vec<f64>>,
    /// Reference Gram `A`, needed by `diag(A)`/`A` preconditioners and the
    /// admissibility check.
    pub gram_ref: Option<Matrix>,
    pub eval: Option<EvalSpec>,
    /// Run even when the admissibility check fails (recorded as a warning).
    pub allow_inadmissible: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.basis.len();
        if self.preconditioner.dimension() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: self.preconditioner.dimension(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be finite and >= 0"));
        }
        self.schedule.validate()?;
        for v in [&self.u0, &self.reference].into_iter().flatten() {
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: v.len(),
                });
            }
        }
        if let Some(e) = &self.eval {
            if e.samples == 0 || e.every == 0 {
                return Err(Error::invalid("eval", "samples and every must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: u64,
    pub mu: f64,
    /// `‖r^k‖` at the pre-update iterate.
    pub residual_norm: f64,
    pub relative_error: Option<f64>,
    pub error_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<StepRecord>,
    pub final_state: IterationState,
    pub admissibility: Option<AdmissibilityReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("run aborted after {} completed steps: {error}", trace.records.len())]
pub struct RunAborted {
    pub error: Error,
    pub trace: RunTrace,
}

/// Step-by-step driver; `run` is a loop over [`Runner::step`].
pub struct Runner {
    config: RunConfig,
    process: ProcessSpec,
    precond: PreconditionerFactor,
    context: Context,
    eval: Option<EvalSet>,
    state: IterationState,
    scale: f64,
    cols: Vec<usize>,
    vals: Vec<f64>,
    grad: Vec<f64>,
    warnings: Vec<String>,
}

impl Runner {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let precond = assemble_preconditioner(
            &config.preconditioner,
            config.gamma,
            config.gram_ref.as_ref(),
        )?;
        let mut warnings = Vec::new();
        if let Some(rep) = &precond.admissibility {
            if !rep.admissible {
                if !config.allow_inadmissible {
                    return Err(Error::NotAdmissible {
                        gamma: config.gamma,
                        min_quotient: rep.min_quotient,
                    });
                }
                warnings.push(format!(
                    "preconditioner not admissible (min quotient {:e}); run forced",
                    rep.min_quotient
                ));
            }
        }
        let process = config.process.with_seed(config.seed);
        let eval = match config.eval {
            Some(e) => Some(EvalSet::draw(
                &process,
                &config.target,
                &config.basis,
                e.samples,
            )?),
            None => None,
        };
        let m = config.basis.len();
        let state = IterationState {
            k: 0,
            u: config.u0.clone().unwrap_or_else(|| vec![0.0; m]),
        };
        Ok(Self {
            context: config.basis.context(),
            scale: config.convention.scale(config.batch_size),
            process,
            precond,
            eval,
            state,
            cols: Vec::new(),
            vals: Vec::new(),
            grad: vec![0.0; m],
            warnings,
            config,
        })
    }

    pub fn state(&self) -> &IterationState {
        &self.state
    }

    pub fn preconditioner(&self) -> &PreconditionerFactor {
        &self.precond
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn eval_set(&self) -> Option<&EvalSet> {
        self.eval.as_ref()
    }

    /// Draws batch `k`, forms `(1/N) Φᵀ r` without materializing `A_k`, and
    /// applies the preconditioned update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let k = self.state.k + 1;
        let batch = draw_batch(
            &self.process,
            &self.config.target,
            self.config.batch_size,
            k,
            self.context,
        );
        let u = &self.state.u;
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let mut rr = 0.0;
        for n in 0..batch.len() {
            self.cols.clear();
            self.vals.clear();
            self.config.basis.eval_sparse(
                &batch.inputs,
                batch.position(n),
                &mut self.cols,
                &mut self.vals,
            );
            let mut fit = 0.0;
            for (&c, &v) in self.cols.iter().zip(&self.vals) {
                fit += v * u[c];
            }
            let r = batch.outputs[n] - fit;
            rr += r * r;
            for (&c, &v) in self.cols.iter().zip(&self.vals) {
                self.grad[c] += v * r;
            }
        }
        if !rr.is_finite() {
            return Err(Error::NonFinite);
        }
        let scale = self.scale;
        self.grad.iter_mut().for_each(|g| *g *= scale);
        let mu = self.config.schedule.value(k);
        self.state = apply_update(&self.state, &self.grad, &self.precond, mu)?;

        let relative_error = self.config.reference.as_ref().map(|r| {
            let e: Vec<f64> = self.state.u.iter().zip(r).map(|(a, b)| a - b).collect();
            norm2(&e) / norm2(r)
        });
        let due = match (&self.eval, self.config.eval) {
            (Some(_), Some(spec)) => k.is_multiple_of(spec.every) || k == self.config.steps,
            _ => false,
        };
        let error_db = match (&self.eval, due) {
            (Some(ev), true) => Some(ev.error_db(&self.state.u)?),
            _ => None,
        };
        Ok(StepRecord {
            k,
            mu,
            residual_norm: rr.sqrt(),
            relative_error,
            error_db,
        })
    }

    fn into_trace(self, records: Vec<StepRecord>) -> RunTrace {
        RunTrace {
            records,
            final_state: self.state,
            admissibility: self.precond.admissibility,
            warnings: self.warnings,
        }
    }
}

/// Runs `config.steps` steps, recording one trace entry per step.
pub fn run(config: RunConfig) -> std::result::Result<RunTrace, RunAborted> {
    run_with(config, |_| {})
}

/// [`run`] with a per-step observer.
pub fn run_with(
    config: RunConfig,
    mut observe: impl FnMut(&StepRecord),
) -> std::result::Result<RunTrace, RunAborted> {
    let m = config.basis.len();
    let u0 = config.u0.clone().unwrap_or_else(|| vec![0.0; m]);
    let steps = config.steps;
    let mut runner = Runner::new(config).map_err(|error| RunAborted {
        error,
        trace: RunTrace {
            records: Vec::new(),
            final_state: IterationState { k: 0, u: u0 },
            admissibility: None,
            warnings: Vec::new(),
        },
    })?;
    let mut records = Vec::with_capacity(steps.min(1 << 20) as usize);
    for _ in 0..steps {
        match runner.step() {
            Ok(rec) => {
                observe(&rec);
                records.push(rec);
            }
            Err(error) => {
                return Err(RunAborted {
                    error,
                    trace: runner.into_trace(records),
                })
            }
        }
    }
    Ok(runner.into_trace(records))
}

/// `1, 2, 5, 10, 20, 50, …` up to `max`, with `max` appended if missing.
pub fn geometric_checkpoints(max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut decade = 1u64;
    'outer: loop {
        for m in [1, 2, 5] {
            let k = decade * m;
            if k > max {
                break 'outer;
            }
            out.push(k);
        }
        decade = match decade.checked_mul(10) {
            Some(d) => d,
            None => break,
        };
    }
    if max > 0 && out.last() != Some(&max) {
        out.push(max);
    }
    out
}

/// Iterates at the given checkpoints for `replicas` runs seeded with
/// `derive_seed(config.seed, r)`. Result is indexed `[replica][checkpoint]`.
///
/// Replicas run on the current rayon pool; output order does not depend on it.
pub fn replica_checkpoints(
    config: &RunConfig,
    replicas: usize,
    checkpoints: &[u64],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("checkpoints", "must be strictly increasing"));
    }
    let base = RunConfig {
        eval: None,
        reference: None,
        steps: last,
        ..config.clone()
    };
    // Setup (factorization, admissibility) is validated once up front.
    Runner::new(base.clone())?;
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut runner = Runner::new(base.with_seed(derive_seed(config.seed, r as u64)))?;
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut next = 0;
            while next < checkpoints.len() {
                runner.step()?;
                if runner.state().k == checkpoints[next] {
                    out.push(runner.state().u.clone());
                    next += 1;
                }
            }
            Ok(out)
        })
        .collect()
}

/// Least squares over every sample a run of `config.steps` steps would draw,
/// optionally with `γC` added to the pooled Gram.
pub fn pooled_least_squares(config: &RunConfig, gamma: f64) -> Result<Vec<f64>> {
    config.validate()?;
    let m = config.basis.len();
    let process = config.process.with_seed(config.seed);
    let context = config.basis.context();
    let mut acc = NormalEquations::new(m);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for k in 1..=config.steps {
        let batch = draw_batch(&process, &config.target, config.batch_size, k, context);
        for n in 0..batch.len() {
            cols.clear();
            vals.clear();
            config
                .basis
                .eval_sparse(&batch.inputs, batch.position(n), &mut cols, &mut vals);
            acc.add_row(&cols, &vals, batch.outputs[n]);
        }
    }
    let (mut a, b) = acc.finish();
    if gamma > 0.0 {
        let c = constraint_gram(
            &config.preconditioner.constraint,
            config.preconditioner.block_count,
        )?;
        a = a.add_scaled(gamma, &c)?;
    }
    factorize_spd(&a)?.solve(&b)
}

/// Streaming accumulator of `(1/n) ΦᵀΦ` and `(1/n) Φᵀy`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    count: usize,
}

impl NormalEquations {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            a: vec![0.0; m * m],
            b: vec![0.0; m],
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds one sparse row; only the upper triangle is accumulated.
    pub fn add_row(&mut self, cols: &[usize], vals: &[f64], y: f64) {
        for (&ci, &vi) in cols.iter().zip(vals) {
            self.b[ci] += vi * y;
            let row = &mut self.a[ci * self.m..(ci + 1) * self.m];
            for (&cj, &vj) in cols.iter().zip(vals) {
                if cj >= ci {
                    row[cj] += vi * vj;
                }
            }
        }
        self.count += 1;
    }

    /// Adds a dense row; only the upper triangle is accumulated.
    pub fn add_dense_row(&mut self, phi: &[f64], y: f64) {
        let m = self.m;
        for i in 0..m {
            let vi = phi[i];
            self.b[i] += vi * y;
            let row = &mut self.a[i * m + i..(i + 1) * m];
            for (dst, &vj) in row.iter_mut().zip(&phi[i..]) {
                *dst += vi * vj;
            }
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &NormalEquations) {
        self.a.iter_mut().zip(&other.a).for_each(|(x, y)| *x += y);
        self.b.iter_mut().zip(&other.b).for_each(|(x, y)| *x += y);
        self.count += other.count;
    }

    /// Removes a previously merged accumulator (leave-one-out sums).
    pub fn without(&self, other: &NormalEquations) -> NormalEquations {
        NormalEquations {
            m: self.m,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect(),
            b: self.b.iter().zip(&other.b).map(|(x, y)| x - y).collect(),
            count: self.count - other.count,
        }
    }

    /// Averaged, symmetrized `(A, b)`.
    pub fn finish(&self) -> (Matrix, Vec<f64>) {
        let m = self.m;
        let s = 1.0 / self.count.max(1) as f64;
        let mut a = Matrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = self.a[i * m + j] * s;
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        (a, self.b.iter().map(|v| v * s).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularization::{BChoice, ConstraintOperator};

    #[test]
    fn schedule_examples() {
        let d = StepSchedule::InverseDecay {
            lambda0: 1.0,
            mu_hat0: 1.0,
        };
        assert_eq!(d.value(1), 1.0);
        assert_eq!(d.value(2), 0.5);
        assert!((d.value(3) - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(StepSchedule::Constant { mu: 0.1 }.value(12345), 0.1);
        let s = StepSchedule::SwitchAt {
            mu0: 0.01,
            switch_step: 1000,
        };
        assert_eq!(s.value(999), 0.01);
        assert_eq!(s.value(1000), 0.01);
        assert_eq!(s.value(1001), 1.0);
        assert_eq!(s.value(1003), 1.0 / 3.0);
        assert!(!StepSchedule::Constant { mu: 0.1 }.square_summable());
        assert!(d.square_summable() && d.sum_diverges());
        assert!(StepSchedule::Constant { mu: 0.0 }.validate().is_err());
    }

    #[test]
    fn checkpoints_ladder() {
        assert_eq!(geometric_checkpoints(100), vec![1, 2, 5, 10, 20, 50, 100]);
        assert_eq!(geometric_checkpoints(30), vec![1, 2, 5, 10, 20, 30]);
        assert!(geometric_checkpoints(0).is_empty());
    }

    #[test]
    fn normal_equations_dense_and_sparse_agree() {
        let mut s = NormalEquations::new(3);
        let mut d = NormalEquations::new(3);
        s.add_row(&[0, 2], &[1.0, 2.0], 3.0);
        d.add_dense_row(&[1.0, 0.0, 2.0], 3.0);
        assert_eq!(s.finish(), d.finish());
        let (a, b) = s.finish();
        assert_eq!(a[(2, 0)], 2.0);
        assert_eq!(b, vec![3.0, 0.0, 6.0]);
    }

    #[test]
    fn identity_step_substitution() {
        let spec =
            PreconditionerSpec::new(BChoice::Identity, ConstraintOperator::none(2), 1).unwrap();
        let p = assemble_preconditioner(&spec, 0.0, None).unwrap();
        let a = Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]);
        let b = [1.0, -2.0];
        let next = psgm_step(
            &IterationState::zeros(2),
            &b,
            GramOperator::Explicit(&a),
            &p,
            1.0,
        )
        .unwrap();
        assert_eq!(next.u, b.to_vec());
        assert_eq!(next.k, 1);
    }
}
