use std::path::Path;

use serde::Serialize;

use psgm::analysis::{
    counterexample_check, estimate_covariances, lemma1_random_suite, mean_norm_monotone,
    replica_study, summarize_replicas, variance_bound_check, verify_lemma3, verify_theorem1_mean,
    Lemma3Family, LemmaReport, MeanCheck, OracleSolution, VarianceBound, MIN_LEMMA3_DRAWS,
    MIN_THEOREM1_REPLICAS,
};
use psgm::basis::BasisFamily;
use psgm::engine::{
    geometric_checkpoints, pooled_least_squares, replica_checkpoints, run_with, EvalSet,
    GradientConvention, RunConfig, StepSchedule,
};
use psgm::numerics::{factorize_spd, norm2, Matrix};
use psgm::regularization::{
    assemble_preconditioner, constraint_gram, gamma_grid, lemma1_params, AdmissibilityReport,
    BChoice, ConstraintOperator, PreconditionerSpec,
};
use psgm::sampling::{ProcessKind, ProcessSpec, TargetFunction, TargetKind};
use psgm::scenario::{crf_small_scaled, Scenario};

use crate::config::{BTag, ConstraintTag, Resolved, ScenarioTag};
use crate::output::{self, ComparisonRow, Provenance, TraceWriter};
use crate::CliError;

/// Evaluation-set size used by `compare` when the config has none.
const COMPARE_EVAL_SAMPLES: usize = 10_000;

fn core(e: psgm::Error) -> CliError {
    match e {
        psgm::Error::InvalidParameter { .. } => CliError::Invalid(e.to_string()),
        other => CliError::Aborted(other.to_string()),
    }
}

/// Variant name of a library error (`NotPositiveDefinite`, …).
fn error_name(e: &psgm::Error) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or_default()
        .to_string()
}

/// Sum of squared first differences within each block.
pub fn roughness(u: &[f64], block_len: usize) -> f64 {
    u.chunks(block_len.max(1))
        .map(|b| b.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>())
        .sum()
}

#[derive(Debug, Serialize)]
struct Summary {
    scenario: ScenarioTag,
    basis: &'static str,
    m: usize,
    block_count: usize,
    batch_size: usize,
    b: BTag,
    constraint: ConstraintTag,
    gamma: f64,
    schedule: StepSchedule,
    steps: u64,
}

impl Summary {
    fn new(r: &Resolved, c: &RunConfig) -> Self {
        Self {
            scenario: r.scenario,
            basis: c.basis.family_name(),
            m: c.basis.len(),
            block_count: c.basis.block_count(),
            batch_size: c.batch_size,
            b: c.preconditioner.b.into(),
            constraint: r.constraint,
            gamma: c.gamma,
            schedule: c.schedule,
            steps: c.steps,
        }
    }
}

#[derive(Debug, Serialize)]
struct OracleSummary {
    sample_count: usize,
    u_hat_norm: f64,
    residual_ms: f64,
    residual_ms_se: f64,
}

#[derive(Debug, Serialize)]
struct RunReport {
    #[serde(flatten)]
    provenance: Provenance,
    command: &'static str,
    status: String,
    error: Option<String>,
    config: Summary,
    steps_completed: usize,
    final_relative_error: Option<f64>,
    final_error_db: Option<f64>,
    warnings: Vec<String>,
    admissibility: Option<AdmissibilityReport>,
    oracle: Option<OracleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Vec<ComparisonRow>>,
}

/// Attaches `û` and `A`. Without them only the relative-error column and
/// `A`-based preconditioners are lost, so an identity-`B` run carries on.
fn attach_oracle(
    s: &mut Scenario,
    warnings: &mut Vec<String>,
) -> Result<Option<OracleSolution>, CliError> {
    match s.attach_oracle() {
        Ok(o) => Ok(Some(o)),
        Err(e) if s.config.preconditioner.b == BChoice::Identity => {
            warnings.push(format!(
                "oracle unavailable ({e}); relative_error left empty"
            ));
            Ok(None)
        }
        Err(e) => Err(CliError::Aborted(format!(
            "oracle failed ({e}); the {:?} preconditioner needs the reference Gram",
            s.config.preconditioner.b
        ))),
    }
}

struct RunOutcome {
    u: Vec<f64>,
    error: Option<psgm::Error>,
}

/// Shared by `run` and `compare`: runs, streams the trace, writes the
/// coefficients, and fills the report.
fn execute(
    r: &Resolved,
    s: &mut Scenario,
    dir: &Path,
    prov: &Provenance,
    report: &mut RunReport,
) -> Result<RunOutcome, CliError> {
    let oracle = attach_oracle(s, &mut report.warnings)?;
    report.oracle = oracle.as_ref().map(|o| OracleSummary {
        sample_count: o.sample_count,
        u_hat_norm: norm2(&o.u_hat),
        residual_ms: o.residual_ms,
        residual_ms_se: o.residual_ms_se,
    });
    report.config = Summary::new(r, &s.config);

    let mut writer = TraceWriter::create(dir, prov)?;
    let mut io_err = None;
    let result = run_with(s.config.clone(), |rec| {
        if io_err.is_none() {
            io_err = writer.record(rec).err();
        }
    });
    writer.finish()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let (trace, error) = match result {
        Ok(t) => (t, None),
        Err(a) => (a.trace, Some(a.error)),
    };
    output::write_coefficients(dir, prov, &trace.final_state.u)?;
    report.steps_completed = trace.records.len();
    report.final_relative_error = trace.records.last().and_then(|x| x.relative_error);
    report.final_error_db = trace.records.iter().rev().find_map(|x| x.error_db);
    report.warnings.extend(trace.warnings);
    report.admissibility = trace.admissibility;
    match &error {
        Some(e) => {
            report.status = "aborted".into();
            report.error = Some(format!("{}: {e}", error_name(e)));
        }
        None => report.status = "completed".into(),
    }
    Ok(RunOutcome {
        u: trace.final_state.u,
        error,
    })
}

fn new_report(r: &Resolved, s: &Scenario, prov: &Provenance, command: &'static str) -> RunReport {
    RunReport {
        provenance: prov.clone(),
        command,
        status: "pending".into(),
        error: None,
        config: Summary::new(r, &s.config),
        steps_completed: 0,
        final_relative_error: None,
        final_error_db: None,
        warnings: Vec::new(),
        admissibility: None,
        oracle: None,
        comparison: None,
    }
}

pub fn cmd_run(r: &Resolved) -> Result<(), CliError> {
    let prov = Provenance::new(&r.identity(), r.seed);
    let mut s = r.scenario()?;
    let dir = output::out_dir(&r.out)?;
    let mut report = new_report(r, &s, &prov, "run");
    let outcome = execute(r, &mut s, &dir, &prov, &mut report);
    finish(&dir, &mut report, outcome.map(|o| o.error))
}

/// Writes `report.json` and converts a run failure into the exit error.
fn finish(
    dir: &Path,
    report: &mut RunReport,
    outcome: Result<Option<psgm::Error>, CliError>,
) -> Result<(), CliError> {
    let err = match outcome {
        Ok(None) => None,
        Ok(Some(e)) => Some(CliError::Aborted(e.to_string())),
        Err(e) => {
            report.status = "aborted".into();
            report.error = Some(e.to_string());
            Some(e)
        }
    };
    output::write_json(dir, "report.json", report)?;
    err.map_or(Ok(()), Err)
}

pub fn cmd_compare(r: &Resolved) -> Result<(), CliError> {
    if r.scenario == ScenarioTag::Crf {
        return Err(CliError::Invalid(
            "compare needs an equalizer or custom scenario (config key `scenario`)".into(),
        ));
    }
    let prov = Provenance::new(&r.identity(), r.seed);
    let mut s = r.scenario()?;
    let dir = output::out_dir(&r.out)?;
    let mut report = new_report(r, &s, &prov, "compare");
    let outcome = match execute(r, &mut s, &dir, &prov, &mut report) {
        Ok(o) => o,
        Err(e) => return finish(&dir, &mut report, Err(e)),
    };

    let cfg = &s.config;
    let samples = cfg.eval.map_or(COMPARE_EVAL_SAMPLES, |e| e.samples);
    let eval = EvalSet::draw(
        &cfg.process.with_seed(cfg.seed),
        &cfg.target,
        &cfg.basis,
        samples,
    )
    .map_err(core)?;
    let block_len = cfg.basis.block_len();
    let row = |method, result: Result<Vec<f64>, psgm::Error>| -> Result<ComparisonRow, CliError> {
        Ok(match result {
            Ok(u) => ComparisonRow {
                method,
                status: "ok".into(),
                error_db: Some(eval.error_db(&u).map_err(core)?),
                roughness: Some(roughness(&u, block_len)),
            },
            Err(e) => ComparisonRow {
                method,
                status: error_name(&e),
                error_db: None,
                roughness: None,
            },
        })
    };
    let psgm_result = match &outcome.error {
        None => Ok(outcome.u.clone()),
        Some(e) => Err(e.clone()),
    };
    let rows = vec![
        row("psgm", psgm_result)?,
        row("batch_ls", pooled_least_squares(cfg, 0.0))?,
    ];
    output::write_comparison(&dir, &prov, &rows)?;
    report.comparison = Some(rows);
    finish(&dir, &mut report, Ok(outcome.error))
}

pub fn cmd_preset_dump(r: &Resolved) -> Result<String, CliError> {
    Ok(format!(
        "# config_hash={} version={}\n{}",
        output::config_hash(&r.identity()),
        output::VERSION,
        r.to_toml()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Lemma1,
    Lemma3,
    Theorem1,
    Variance,
    All,
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == other || self == Suite::All
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyParams {
    pub suite: Suite,
    pub seed: u64,
    pub replicas: Option<usize>,
    pub full_scale: bool,
    #[serde(skip)]
    pub out: String,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    #[serde(flatten)]
    provenance: Provenance,
    command: &'static str,
    params: VerifyParams,
    pass: bool,
    reports: Vec<LemmaReport>,
}

impl VerifyParams {
    fn validate(&self) -> Result<(), CliError> {
        if let Some(n) = self.replicas {
            if self.suite.includes(Suite::Lemma3) && n < MIN_LEMMA3_DRAWS {
                return Err(CliError::Invalid(format!(
                    "--replicas {n}: lemma3 needs at least {MIN_LEMMA3_DRAWS} draws"
                )));
            }
            if self.suite.includes(Suite::Theorem1) && n < MIN_THEOREM1_REPLICAS {
                return Err(CliError::Invalid(format!(
                    "--replicas {n}: theorem1 needs at least {MIN_THEOREM1_REPLICAS} replicas"
                )));
            }
            if n < 2 {
                return Err(CliError::Invalid(format!(
                    "--replicas {n}: need at least 2"
                )));
            }
        }
        Ok(())
    }
}

pub fn cmd_verify(p: &VerifyParams) -> Result<(), CliError> {
    p.validate()?;
    let prov = Provenance::new(p, p.seed);
    let dir = output::out_dir(&p.out)?;
    let mut reports = Vec::new();
    if p.suite.includes(Suite::Lemma1) {
        reports.push(lemma1_random_suite(p.replicas.unwrap_or(100), 20, p.seed).map_err(core)?);
        reports.push(counterexample_check().map_err(core)?);
    }
    if p.suite.includes(Suite::Lemma3) {
        let draws = p
            .replicas
            .unwrap_or(if p.full_scale { 1_000_000 } else { 100_000 });
        reports.push(verify_lemma3(&Lemma3Family::ALL, 4, draws, p.seed).map_err(core)?);
    }
    if p.suite.includes(Suite::Theorem1) {
        reports.push(theorem1_fast_path(p.replicas.unwrap_or(10_000), p.seed)?);
        reports.push(theorem1_crf(
            p.replicas.unwrap_or(1000),
            p.seed,
            p.full_scale,
        )?);
    }
    if p.suite.includes(Suite::Variance) {
        reports.extend(variance_suite(p.replicas, p.seed, p.full_scale)?);
    }
    let pass = reports.iter().all(|r| r.pass);
    let report = VerifyReport {
        provenance: prov,
        command: "verify",
        params: p.clone(),
        pass,
        reports,
    };
    output::write_json(&dir, "report.json", &report)?;
    for r in &report.reports {
        eprintln!(
            "{:<20} {} trials={} max_violation={:e}",
            r.lemma,
            if r.pass { "PASS" } else { "FAIL" },
            r.trials,
            r.max_violation
        );
    }
    if pass {
        Ok(())
    } else {
        Err(CliError::VerifyFailed)
    }
}

/// Exact `A_ij = 1/(i+j+1)` and `b_i = 1/(i+p+1)` for monomials against
/// `x^p` under U(0, 1).
fn hilbert_system(m: usize, p: f64) -> (Matrix, Vec<f64>) {
    let mut a = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = 1.0 / (i + j + 1) as f64;
        }
    }
    let b = (0..m).map(|i| 1.0 / (i as f64 + p + 1.0)).collect();
    (a, b)
}

/// `B = A`, `γ = 0`, `μ = 1`: the first iterate is unbiased for `û`.
fn theorem1_fast_path(replicas: usize, seed: u64) -> Result<LemmaReport, CliError> {
    let m = 4;
    let exponent = 1.0 / 5.5;
    let (a, b) = hilbert_system(m, exponent);
    let u_hat = factorize_spd(&a).and_then(|f| f.solve(&b)).map_err(core)?;
    let config = RunConfig {
        process: ProcessSpec::new(ProcessKind::Uniform { lo: 0.0, hi: 1.0 }, seed).map_err(core)?,
        target: TargetFunction::new(TargetKind::Power { exponent }, 0.0).map_err(core)?,
        basis: BasisFamily::monomial(m, 0.0, 1.0).map_err(core)?,
        preconditioner: PreconditionerSpec::new(BChoice::FullA, ConstraintOperator::none(m), 1)
            .map_err(core)?,
        gamma: 0.0,
        schedule: StepSchedule::Constant { mu: 1.0 },
        batch_size: 100,
        steps: 1,
        seed,
        u0: None,
        convention: GradientConvention::Normalized,
        reference: None,
        gram_ref: Some(a),
        eval: None,
        allow_inadmissible: false,
    };
    let iterates = replica_checkpoints(&config, replicas, &[1]).map_err(core)?;
    let errors: Vec<Vec<Vec<f64>>> = iterates
        .into_iter()
        .map(|it| vec![it[0].iter().zip(&u_hat).map(|(x, y)| x - y).collect()])
        .collect();
    let study = summarize_replicas(&errors, &[1], seed).map_err(core)?;
    let mut rep = verify_theorem1_mean(&study, &MeanCheck::FirstStep).map_err(core)?;
    rep.lemma = "theorem1_fast_path".into();
    Ok(rep)
}

/// Mean error of the CRF preset (batch 100, variance-bound schedule) at
/// decade checkpoints.
fn theorem1_crf(replicas: usize, seed: u64, full_scale: bool) -> Result<LemmaReport, CliError> {
    let mut s = crf_small_scaled(seed, false).map_err(core)?;
    s.config.batch_size = 100;
    let o = s.attach_oracle().map_err(core)?;
    s.config.schedule = crf_bound(&s, &o, 200, seed)?.schedule();
    let ks = if full_scale {
        vec![100, 1000, 10_000]
    } else {
        vec![10, 100, 1000]
    };
    let study = replica_study(&s.config, &o.u_hat, replicas, &ks, seed).map_err(core)?;
    let mut rep = verify_theorem1_mean(&study, &MeanCheck::Decreasing(ks)).map_err(core)?;
    rep.lemma = "theorem1_crf".into();
    Ok(rep)
}

fn crf_bound(
    s: &Scenario,
    o: &OracleSolution,
    cov_replicas: usize,
    seed: u64,
) -> Result<VarianceBound, CliError> {
    let spec = &s.config.preconditioner;
    let b = spec.b_matrix(Some(&o.a)).map_err(core)?;
    let c = constraint_gram(&spec.constraint, spec.block_count).map_err(core)?;
    let params = lemma1_params(&o.a, &b, &c, &gamma_grid(s.config.gamma)).map_err(core)?;
    let d = assemble_preconditioner(spec, s.config.gamma, None)
        .map_err(core)?
        .d;
    let cfg = &s.config;
    let cov = estimate_covariances(
        &cfg.process,
        &cfg.target,
        &cfg.basis,
        cfg.batch_size,
        cov_replicas,
        seed,
    )
    .map_err(core)?;
    Ok(VarianceBound::new(&params, &cov, d, norm2(&o.u_hat)))
}

/// Mean-square bound and monotone mean error norm on the CRF preset.
fn variance_suite(
    replicas: Option<usize>,
    seed: u64,
    full_scale: bool,
) -> Result<Vec<LemmaReport>, CliError> {
    let mut s = crf_small_scaled(seed, false).map_err(core)?;
    let o = s.attach_oracle().map_err(core)?;
    let bound = crf_bound(&s, &o, 200, seed)?;
    let schedule = bound.schedule();
    s.config.schedule = schedule;
    let (default_replicas, steps) = if full_scale {
        (500, 10_000)
    } else {
        (100, 1000)
    };
    let study = replica_study(
        &s.config,
        &o.u_hat,
        replicas.unwrap_or(default_replicas),
        &geometric_checkpoints(steps),
        seed,
    )
    .map_err(core)?;
    Ok(vec![
        variance_bound_check(&study, &bound, &schedule).map_err(core)?,
        mean_norm_monotone(&study),
    ])
}
