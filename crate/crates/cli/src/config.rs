//! Experiment configuration files: a scenario tag plus optional overrides of
//! every run parameter. Unset fields fall back to the scenario preset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use psgm::basis::{build_ortho, BasisFamily};
use psgm::engine::{EvalSpec, GradientConvention, StepSchedule};
use psgm::regularization::{BChoice, ConstraintOperator, PreconditionerSpec};
use psgm::sampling::{
    derive_seed, ChannelParams, MixtureComponent, ProcessKind, ProcessSpec, TargetFunction,
    TargetKind,
};
use psgm::scenario::{crf_small_scaled, equalizer_unsolved, Scenario};

use crate::CliError;

const CUSTOM_BASIS_STREAM: u64 = 0xC0B5;
pub const DEFAULT_SEED: u64 = 20_240_611;
pub const DEFAULT_OUT: &str = "psgm-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    Crf,
    Equalizer,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BTag {
    Identity,
    DiagOfA,
    FullA,
}

impl From<BTag> for BChoice {
    fn from(t: BTag) -> Self {
        match t {
            BTag::Identity => BChoice::Identity,
            BTag::DiagOfA => BChoice::DiagOfA,
            BTag::FullA => BChoice::FullA,
        }
    }
}

impl From<BChoice> for BTag {
    fn from(b: BChoice) -> Self {
        match b {
            BChoice::Identity => BTag::Identity,
            BChoice::DiagOfA => BTag::DiagOfA,
            BChoice::FullA => BTag::FullA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTag {
    None,
    FirstDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessConfig {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// The bimodal intensity distribution of the `crf` preset.
    CrfMixture,
    GaussianMixture {
        means: Vec<f64>,
        sigmas: Vec<f64>,
        weights: Vec<f64>,
        support: Option<[f64; 2]>,
    },
    Correlated {
        correlation: f64,
        sigma: f64,
    },
    Discrete {
        points: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Identity,
    Power { exponent: f64 },
    Polynomial { coeffs: Vec<f64> },
    Channel { kernel: Vec<f64>, a3: f64, a5: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisConfig {
    Monomial {
        m: usize,
        lo: f64,
        hi: f64,
    },
    /// Orthonormal polynomials built from `construction_samples` process draws.
    Orthogonal {
        max_degree: usize,
        construction_samples: usize,
        lo: f64,
        hi: f64,
    },
    Lut {
        bins: usize,
        lo: f64,
        hi: f64,
        /// Memory tap offsets; a plain LUT when absent.
        taps: Option<Vec<i32>>,
        #[serde(default)]
        gain: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    pub process: ProcessConfig,
    pub target: TargetConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<ScenarioTag>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub full_scale: Option<bool>,
    pub steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub gamma: Option<f64>,
    pub b: Option<BTag>,
    pub constraint: Option<ConstraintTag>,
    pub schedule: Option<StepSchedule>,
    pub convention: Option<GradientConvention>,
    pub u0: Option<Vec<f64>>,
    pub eval: Option<EvalConfig>,
    pub allow_inadmissible: Option<bool>,
    pub oracle_samples: Option<usize>,
    pub replicas: Option<usize>,
    pub custom: Option<CustomConfig>,
}

/// A configuration with every field settled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolved {
    pub scenario: ScenarioTag,
    pub seed: u64,
    pub out: String,
    pub full_scale: bool,
    pub steps: u64,
    pub batch_size: usize,
    pub gamma: f64,
    pub b: BTag,
    pub constraint: ConstraintTag,
    pub schedule: StepSchedule,
    pub convention: GradientConvention,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
    pub allow_inadmissible: bool,
    pub oracle_samples: usize,
    pub replicas: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomConfig>,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Invalid(format!("config: {}", e.message())))
}

/// Command-line and environment overrides, highest precedence first.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub steps: Option<u64>,
    pub full_scale: bool,
    pub replicas: Option<usize>,
}

impl Overrides {
    /// Fills seed and output directory from `PSGM_SEED` / `PSGM_OUT` where
    /// no flag was given.
    pub fn with_env(mut self) -> Result<Self, CliError> {
        if self.seed.is_none() {
            if let Ok(v) = std::env::var("PSGM_SEED") {
                let seed = v.trim().parse().map_err(|_| {
                    CliError::Invalid(format!("PSGM_SEED: `{v}` is not an unsigned integer"))
                })?;
                self.seed = Some(seed);
            }
        }
        if self.out.is_none() {
            self.out = std::env::var("PSGM_OUT").ok().filter(|s| !s.is_empty());
        }
        Ok(self)
    }
}

fn invalid(key: &str, why: &str) -> CliError {
    CliError::Invalid(format!("config key `{key}`: {why}"))
}

/// Preset defaults for a scenario, before any override.
pub fn preset(tag: ScenarioTag, full_scale: bool) -> Resolved {
    let (steps, batch_size, gamma, b, schedule, eval, allow, oracle, replicas) = match tag {
        ScenarioTag::Crf => (
            if full_scale { 500_000 } else { 50_000 },
            1000,
            0.02,
            BTag::Identity,
            StepSchedule::SwitchAt {
                mu0: 0.01,
                switch_step: 1000,
            },
            EvalConfig {
                samples: 10_000,
                every: 100,
            },
            false,
            if full_scale { 50_000_000 } else { 1_000_000 },
            500,
        ),
        ScenarioTag::Equalizer => (
            if full_scale { 100_000 } else { 10_000 },
            1000,
            0.02,
            BTag::DiagOfA,
            StepSchedule::Constant { mu: 0.1 },
            EvalConfig {
                samples: 100_000,
                every: 100,
            },
            true,
            if full_scale { 50_000_000 } else { 2_000_000 },
            100,
        ),
        ScenarioTag::Custom => (
            1000,
            100,
            0.02,
            BTag::Identity,
            StepSchedule::Constant { mu: 0.1 },
            EvalConfig {
                samples: 10_000,
                every: 100,
            },
            false,
            100_000,
            100,
        ),
    };
    Resolved {
        scenario: tag,
        seed: DEFAULT_SEED,
        out: DEFAULT_OUT.to_string(),
        full_scale,
        steps,
        batch_size,
        gamma,
        b,
        constraint: ConstraintTag::FirstDifference,
        schedule,
        convention: GradientConvention::Normalized,
        u0: None,
        eval: Some(eval),
        allow_inadmissible: allow,
        oracle_samples: oracle,
        replicas,
        custom: None,
    }
}

impl ExperimentConfig {
    /// Merges preset, file and overrides, then checks every field.
    pub fn resolve(self, ov: &Overrides) -> Result<Resolved, CliError> {
        let tag = self
            .scenario
            .ok_or_else(|| invalid("scenario", "missing (crf | equalizer | custom)"))?;
        let full_scale = ov.full_scale || self.full_scale.unwrap_or(false);
        let mut r = preset(tag, full_scale);
        r.seed = ov.seed.or(self.seed).unwrap_or(r.seed);
        r.out = ov.out.clone().or(self.out).unwrap_or(r.out);
        r.steps = ov.steps.or(self.steps).unwrap_or(r.steps);
        r.batch_size = self.batch_size.unwrap_or(r.batch_size);
        r.gamma = self.gamma.unwrap_or(r.gamma);
        r.b = self.b.unwrap_or(r.b);
        r.constraint = self.constraint.unwrap_or(r.constraint);
        r.schedule = self.schedule.unwrap_or(r.schedule);
        r.convention = self.convention.unwrap_or(r.convention);
        r.u0 = self.u0;
        r.eval = self.eval.or(r.eval);
        r.allow_inadmissible = self.allow_inadmissible.unwrap_or(r.allow_inadmissible);
        r.oracle_samples = self.oracle_samples.unwrap_or(r.oracle_samples);
        r.replicas = ov.replicas.or(self.replicas).unwrap_or(r.replicas);
        r.custom = self.custom;
        r.validate()?;
        Ok(r)
    }
}

impl Resolved {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(invalid("gamma", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if self.oracle_samples < 10_000 {
            return Err(invalid("oracle_samples", "must be >= 10000"));
        }
        if self.replicas < 2 {
            return Err(invalid("replicas", "must be >= 2"));
        }
        if self.out.is_empty() {
            return Err(invalid("out", "must not be empty"));
        }
        self.schedule
            .validate()
            .map_err(|e| invalid("schedule", &e.to_string()))?;
        if let Some(e) = &self.eval {
            if e.samples == 0 || e.every == 0 {
                return Err(invalid("eval", "samples and every must be >= 1"));
            }
        }
        match (self.scenario, &self.custom) {
            (ScenarioTag::Custom, None) => {
                return Err(invalid("custom", "required when scenario = \"custom\""))
            }
            (ScenarioTag::Custom, Some(c)) => validate_custom(c)?,
            (_, Some(_)) => {
                return Err(invalid("custom", "only allowed when scenario = \"custom\""))
            }
            _ => {}
        }
        if let Some(u0) = &self.u0 {
            if u0.iter().any(|v| !v.is_finite()) {
                return Err(invalid("u0", "entries must be finite"));
            }
        }
        Ok(())
    }

    /// Builds the run configuration (without oracle).
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let core = |key: &'static str| move |e: psgm::Error| invalid(key, &e.to_string());
        let mut s = match self.scenario {
            ScenarioTag::Crf => {
                crf_small_scaled(self.seed, self.full_scale).map_err(core("scenario"))?
            }
            ScenarioTag::Equalizer => {
                equalizer_unsolved(self.seed, self.full_scale).map_err(core("scenario"))?
            }
            ScenarioTag::Custom => {
                let c = self.custom.as_ref().expect("validated");
                build_custom(c, self.seed)?
            }
        };
        let basis = &s.config.basis;
        let block_len = basis.block_len();
        let op = match self.constraint {
            ConstraintTag::None => ConstraintOperator::none(block_len),
            ConstraintTag::FirstDifference => {
                ConstraintOperator::first_difference(block_len).map_err(core("constraint"))?
            }
        };
        s.config.preconditioner = PreconditionerSpec::new(self.b.into(), op, basis.block_count())
            .map_err(core("constraint"))?;
        s.config.gamma = self.gamma;
        s.config.schedule = self.schedule;
        s.config.batch_size = self.batch_size;
        s.config.steps = self.steps;
        s.config.seed = self.seed;
        s.config.process = s.config.process.with_seed(self.seed);
        s.config.u0 = self.u0.clone();
        s.config.convention = self.convention;
        s.config.eval = self.eval.map(|e| EvalSpec {
            samples: e.samples,
            every: e.every,
        });
        s.config.allow_inadmissible = self.allow_inadmissible;
        s.oracle_samples = self.oracle_samples;
        s.config.validate().map_err(|e| match e {
            psgm::Error::InvalidParameter { name, reason } => invalid(name, &reason),
            psgm::Error::DimensionMismatch { expected, found } => {
                invalid("u0", &format!("expected {expected} entries, found {found}"))
            }
            other => invalid("config", &other.to_string()),
        })?;
        Ok(s)
    }

    /// The fields that determine the results; the output directory is
    /// excluded so relocating a run does not change its hash.
    pub fn identity(&self) -> Resolved {
        Resolved {
            out: String::new(),
            ..self.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn validate_custom(c: &CustomConfig) -> Result<(), CliError> {
    if !(c.noise_sigma.is_finite() && c.noise_sigma >= 0.0) {
        return Err(invalid("custom.noise_sigma", "must be finite and >= 0"));
    }
    if let ProcessConfig::GaussianMixture {
        means,
        sigmas,
        weights,
        ..
    } = &c.process
    {
        if means.is_empty() || means.len() != sigmas.len() || means.len() != weights.len() {
            return Err(invalid(
                "custom.process",
                "means, sigmas and weights need equal, nonzero lengths",
            ));
        }
    }
    if matches!(
        &c.basis,
        BasisConfig::Lut {
            taps: None,
            gain: true,
            ..
        }
    ) {
        return Err(invalid("custom.basis.gain", "only meaningful with taps"));
    }
    Ok(())
}

fn build_custom(c: &CustomConfig, seed: u64) -> Result<Scenario, CliError> {
    let core = |key: &'static str| move |e: psgm::Error| invalid(key, &e.to_string());
    let kind = match &c.process {
        ProcessConfig::Uniform { lo, hi } => ProcessKind::Uniform { lo: *lo, hi: *hi },
        ProcessConfig::CrfMixture => ProcessSpec::crf_mixture(seed).kind,
        ProcessConfig::GaussianMixture {
            means,
            sigmas,
            weights,
            support,
        } => ProcessKind::GaussianMixture {
            components: means
                .iter()
                .zip(sigmas)
                .zip(weights)
                .map(|((&mean, &sigma), &weight)| MixtureComponent {
                    mean,
                    sigma,
                    weight,
                })
                .collect(),
            support: support.map(|[a, b]| (a, b)),
        },
        ProcessConfig::Correlated { correlation, sigma } => ProcessKind::CorrelatedStream {
            correlation: *correlation,
            innovation_sigma: sigma * (1.0 - correlation * correlation).max(0.0).sqrt(),
        },
        ProcessConfig::Discrete { points } => ProcessKind::Discrete {
            points: points.clone(),
        },
    };
    let process = ProcessSpec::new(kind, seed).map_err(core("custom.process"))?;
    let kind = match &c.target {
        TargetConfig::Identity => TargetKind::Identity,
        TargetConfig::Power { exponent } => TargetKind::Power {
            exponent: *exponent,
        },
        TargetConfig::Polynomial { coeffs } => TargetKind::Polynomial {
            coeffs: coeffs.clone(),
        },
        TargetConfig::Channel { kernel, a3, a5 } => TargetKind::Channel(ChannelParams {
            kernel: kernel.clone(),
            a3: *a3,
            a5: *a5,
        }),
    };
    let target = TargetFunction::new(kind, c.noise_sigma).map_err(core("custom.target"))?;
    let basis = match &c.basis {
        BasisConfig::Monomial { m, lo, hi } => {
            BasisFamily::monomial(*m, *lo, *hi).map_err(core("custom.basis"))?
        }
        BasisConfig::Orthogonal {
            max_degree,
            construction_samples,
            lo,
            hi,
        } => {
            if lo.partial_cmp(hi) != Some(std::cmp::Ordering::Less) {
                return Err(invalid("custom.basis", "lo must be < hi"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, CUSTOM_BASIS_STREAM));
            let samples = process.sample(&mut rng, *construction_samples);
            let p = build_ortho(&samples, *max_degree).map_err(core("custom.basis"))?;
            BasisFamily::OrthogonalPoly(p.with_domain(*lo, *hi))
        }
        BasisConfig::Lut {
            bins,
            lo,
            hi,
            taps,
            gain,
        } => {
            let lut = BasisFamily::lut(*bins, *lo, *hi).map_err(core("custom.basis"))?;
            match taps {
                Some(t) => {
                    BasisFamily::tapped(t.clone(), lut, *gain).map_err(core("custom.basis.taps"))?
                }
                None => lut,
            }
        }
    };
    let m = basis.len();
    let preconditioner = PreconditionerSpec::new(BChoice::Identity, ConstraintOperator::none(m), 1)
        .map_err(core("custom.basis"))?;
    Ok(Scenario {
        name: "custom",
        config: psgm::engine::RunConfig {
            process,
            target,
            basis,
            preconditioner,
            gamma: 0.0,
            schedule: StepSchedule::Constant { mu: 0.1 },
            batch_size: 1,
            steps: 0,
            seed,
            u0: None,
            convention: GradientConvention::Normalized,
            reference: None,
            gram_ref: None,
            eval: None,
            allow_inadmissible: false,
        },
        oracle_samples: 10_000,
    })
}
