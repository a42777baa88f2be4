//! Input processes, observation through the unknown function, and batch drawing.
//!
//! Every batch is a pure function of `(process seed, step index)`: the RNG is a
//! ChaCha stream keyed by the seed with the step index as stream id, so batches
//! for different steps are independent and can be generated in any order.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SplitMix64 finalizer; maps `(base, index)` to a well-mixed child seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for step `k` of a process seeded with `seed`.
pub fn step_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: f64,
    pub sigma: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProcessKind {
    /// Gaussian mixture; draws outside `support` are rejected and redrawn.
    GaussianMixture {
        components: Vec<MixtureComponent>,
        support: Option<(f64, f64)>,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Stationary AR(1) stream `x_n = ρ x_{n-1} + σ ε_n`, restarted every batch.
    CorrelatedStream {
        correlation: f64,
        innovation_sigma: f64,
    },
    /// Uniform over a finite set of points (enumerable scenarios, point masses).
    Discrete {
        points: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    pub seed: u64,
}

impl ProcessSpec {
    pub fn new(kind: ProcessKind, seed: u64) -> Result<Self> {
        match &kind {
            ProcessKind::GaussianMixture {
                components,
                support,
            } => {
                if components.is_empty() {
                    return Err(Error::invalid(
                        "components",
                        "mixture needs at least one component",
                    ));
                }
                if components.iter().any(|c| !(c.sigma > 0.0)) {
                    return Err(Error::invalid("sigma", "mixture sigmas must be > 0"));
                }
                if components.iter().any(|c| !(c.weight > 0.0)) {
                    return Err(Error::invalid("weight", "mixture weights must be > 0"));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(
                        "weight",
                        format!("weights sum to {total}, not 1"),
                    ));
                }
                if let Some((lo, hi)) = support {
                    if !(lo < hi) {
                        return Err(Error::invalid("support", "lo must be < hi"));
                    }
                }
            }
            ProcessKind::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::invalid("uniform", "lo must be < hi"));
                }
            }
            ProcessKind::CorrelatedStream {
                correlation,
                innovation_sigma,
            } => {
                if !(correlation.abs() < 1.0) {
                    return Err(Error::invalid("correlation", "|correlation| must be < 1"));
                }
                if !(*innovation_sigma > 0.0) {
                    return Err(Error::invalid("innovation_sigma", "must be > 0"));
                }
            }
            ProcessKind::Discrete { points } => {
                if points.is_empty() || points.iter().any(|p| !p.is_finite()) {
                    return Err(Error::invalid("points", "need at least one finite point"));
                }
            }
        }
        Ok(Self { kind, seed })
    }

    /// Equal-weight two-component mixture on [0, 1] with modes at 0.3 and 0.6.
    pub fn crf_mixture(seed: u64) -> Self {
        Self::new(
            ProcessKind::GaussianMixture {
                components: vec![
                    MixtureComponent {
                        mean: 0.3,
                        sigma: 0.01,
                        weight: 0.5,
                    },
                    MixtureComponent {
                        mean: 0.6,
                        sigma: 0.007,
                        weight: 0.5,
                    },
                ],
                support: Some((0.0, 1.0)),
            },
            seed,
        )
        .expect("valid preset")
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            kind: self.kind.clone(),
            seed,
        }
    }

    /// Draws `count` consecutive samples from the process using `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        match &self.kind {
            ProcessKind::GaussianMixture {
                components,
                support,
            } => (0..count)
                .map(|_| loop {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut comp = &components[components.len() - 1];
                    for c in components {
                        acc += c.weight;
                        if u < acc {
                            comp = c;
                            break;
                        }
                    }
                    let z: f64 = rng.sample(StandardNormal);
                    let x = comp.mean + comp.sigma * z;
                    match support {
                        Some((lo, hi)) if x < *lo || x > *hi => continue,
                        _ => break x,
                    }
                })
                .collect(),
            ProcessKind::Uniform { lo, hi } => (0..count)
                .map(|_| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
            ProcessKind::CorrelatedStream {
                correlation,
                innovation_sigma,
            } => {
                let stationary = innovation_sigma / (1.0 - correlation * correlation).sqrt();
                let mut out = Vec::with_capacity(count);
                let mut x = stationary * rng.sample::<f64, _>(StandardNormal);
                for _ in 0..count {
                    out.push(x);
                    x = correlation * x + innovation_sigma * rng.sample::<f64, _>(StandardNormal);
                }
                out
            }
            ProcessKind::Discrete { points } => (0..count)
                .map(|_| points[rng.random_range(0..points.len())])
                .collect(),
        }
    }

    /// Standard deviation of a single sample, where it has a closed form.
    pub fn marginal_sigma(&self) -> Option<f64> {
        match &self.kind {
            ProcessKind::CorrelatedStream {
                correlation,
                innovation_sigma,
            } => Some(innovation_sigma / (1.0 - correlation * correlation).sqrt()),
            ProcessKind::Uniform { lo, hi } => Some((hi - lo) / 12f64.sqrt()),
            _ => None,
        }
    }
}

/// Normalized density of a Gaussian-mixture process.
pub fn mixture_pdf(p: &ProcessSpec, x: f64) -> Result<f64> {
    match &p.kind {
        ProcessKind::GaussianMixture { components, .. } => Ok(components
            .iter()
            .map(|c| {
                let z = (x - c.mean) / c.sigma;
                c.weight * (-0.5 * z * z).exp() / (c.sigma * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()),
        _ => Err(Error::WrongProcessTag {
            expected: "GaussianMixture",
        }),
    }
}

/// Samples needed before (`lead`) and after (`trail`) each observed position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub lead: usize,
    pub trail: usize,
}

impl Context {
    pub fn union(self, other: Context) -> Context {
        Context {
            lead: self.lead.max(other.lead),
            trail: self.trail.max(other.trail),
        }
    }

    /// Context required by taps at `offsets`, where tap `t` reads `x_{n-t}`.
    pub fn for_offsets(offsets: &[i32]) -> Context {
        Context {
            lead: offsets.iter().copied().max().unwrap_or(0).max(0) as usize,
            trail: offsets
                .iter()
                .copied()
                .min()
                .unwrap_or(0)
                .min(0)
                .unsigned_abs() as usize,
        }
    }
}

/// Static odd-polynomial nonlinearity applied to a short FIR combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// FIR weights for offsets `-(L-1)/2 ..= (L-1)/2`; offset `t` weights `x_{n-t}`.
    pub kernel: Vec<f64>,
    pub a3: f64,
    pub a5: f64,
}

impl ChannelParams {
    pub fn offsets(&self) -> Vec<i32> {
        let half = (self.kernel.len() / 2) as i32;
        (-half..=half).collect()
    }

    pub fn apply(&self, samples: &[f64], idx: usize) -> f64 {
        let v: f64 = self
            .offsets()
            .iter()
            .zip(&self.kernel)
            .map(|(&t, &h)| h * samples[(idx as i64 - t as i64) as usize])
            .sum();
        let v2 = v * v;
        v * (1.0 + self.a3 * v2 + self.a5 * v2 * v2)
    }
}

#[derive(Clone)]
pub enum TargetKind {
    Identity,
    /// `f(x) = x^exponent` on `x ≥ 0` (gamma-curve camera response).
    Power {
        exponent: f64,
    },
    /// `f(x) = Σ c_i x^i`
    Polynomial {
        coeffs: Vec<f64>,
    },
    Channel(ChannelParams),
    /// Caller-supplied `f(samples, idx)`; declares its own context.
    Custom {
        name: String,
        context: Context,
        func: TargetFn,
    },
}

/// `f(samples, idx)` for [`TargetKind::Custom`].
pub type TargetFn = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;

impl fmt::Debug for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Identity => write!(f, "Identity"),
            TargetKind::Power { exponent } => write!(f, "Power({exponent})"),
            TargetKind::Polynomial { coeffs } => write!(f, "Polynomial({coeffs:?})"),
            TargetKind::Channel(p) => write!(f, "Channel({p:?})"),
            TargetKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// The unknown function `f` plus additive observation noise.
#[derive(Debug, Clone)]
pub struct TargetFunction {
    pub kind: TargetKind,
    pub noise_sigma: f64,
}

impl TargetFunction {
    pub fn new(kind: TargetKind, noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma", "must be >= 0"));
        }
        Ok(Self { kind, noise_sigma })
    }

    pub fn identity() -> Self {
        Self::new(TargetKind::Identity, 0.0).unwrap()
    }

    /// Gamma camera response `x^(1/5.5)`, noiseless.
    pub fn gamma_crf() -> Self {
        Self::new(
            TargetKind::Power {
                exponent: 1.0 / 5.5,
            },
            0.0,
        )
        .unwrap()
    }

    pub fn custom(
        name: impl Into<String>,
        context: Context,
        func: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            TargetKind::Custom {
                name: name.into(),
                context,
                func: Arc::new(func),
            },
            0.0,
        )
        .unwrap()
    }

    pub fn with_noise(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma", "must be >= 0"));
        }
        self.noise_sigma = sigma;
        Ok(self)
    }

    pub fn context(&self) -> Context {
        match &self.kind {
            TargetKind::Channel(p) => Context::for_offsets(&p.offsets()),
            TargetKind::Custom { context, .. } => *context,
            _ => Context::default(),
        }
    }

    /// Noise-free value at position `idx` of `samples`.
    pub fn eval(&self, samples: &[f64], idx: usize) -> f64 {
        let x = samples[idx];
        match &self.kind {
            TargetKind::Identity => x,
            TargetKind::Power { exponent } => x.max(0.0).powf(*exponent),
            TargetKind::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            TargetKind::Channel(p) => p.apply(samples, idx),
            TargetKind::Custom { func, .. } => func(samples, idx),
        }
    }
}

/// Builds the synthetic memory channel used in place of captured data.
pub fn synthetic_channel(params: ChannelParams, noise_sigma: f64) -> Result<TargetFunction> {
    if params.kernel.is_empty() || params.kernel.len() > 5 || params.kernel.len().is_multiple_of(2)
    {
        return Err(Error::invalid(
            "kernel",
            "memory kernel must have an odd length of at most 5 taps",
        ));
    }
    TargetFunction::new(TargetKind::Channel(params), noise_sigma)
}

/// One step's worth of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub k: u64,
    /// `context.lead` samples, then the N observed positions, then `context.trail`.
    pub inputs: Vec<f64>,
    pub context: Context,
    pub outputs: Vec<f64>,
    /// Inclusive time indices covered by `inputs`.
    pub window: (u64, u64),
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Index into `inputs` of observed position `n`.
    pub fn position(&self, n: usize) -> usize {
        self.context.lead + n
    }

    /// The N observed inputs without context.
    pub fn points(&self) -> &[f64] {
        &self.inputs[self.context.lead..self.context.lead + self.outputs.len()]
    }
}

/// Draws batch `k`: N observed positions (plus context) and their noisy outputs.
pub fn draw_batch(
    p: &ProcessSpec,
    f: &TargetFunction,
    n: usize,
    k: u64,
    context: Context,
) -> SampleBatch {
    let context = context.union(f.context());
    let total = context.lead + n + context.trail;
    let mut rng = step_rng(p.seed, k);
    let inputs = p.sample(&mut rng, total);
    let outputs = (0..n)
        .map(|i| {
            let clean = f.eval(&inputs, context.lead + i);
            if f.noise_sigma > 0.0 {
                clean + f.noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                clean
            }
        })
        .collect();
    // One idle tick between batches keeps windows strictly separated.
    let start = k * (total as u64 + 1);
    SampleBatch {
        k,
        inputs,
        context,
        outputs,
        window: (start, start + total as u64 - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_target_without_noise() {
        let p = ProcessSpec::new(ProcessKind::Uniform { lo: 0.0, hi: 1.0 }, 3).unwrap();
        let b = draw_batch(&p, &TargetFunction::identity(), 5, 0, Context::default());
        assert_eq!(b.outputs, b.points());
        assert_eq!(b.len(), 5);
    }

    #[test]
    fn gamma_crf_endpoints() {
        let f = TargetFunction::gamma_crf();
        assert_eq!(f.eval(&[0.0, 1.0], 0), 0.0);
        assert_eq!(f.eval(&[0.0, 1.0], 1), 1.0);
    }

    #[test]
    fn pdf_tails_and_symmetry() {
        let p = ProcessSpec::crf_mixture(0);
        assert!(mixture_pdf(&p, 0.9).unwrap() < 1e-10);
        let sym = ProcessSpec::new(
            ProcessKind::GaussianMixture {
                components: vec![
                    MixtureComponent {
                        mean: -1.0,
                        sigma: 0.5,
                        weight: 0.5,
                    },
                    MixtureComponent {
                        mean: 1.0,
                        sigma: 0.5,
                        weight: 0.5,
                    },
                ],
                support: None,
            },
            0,
        )
        .unwrap();
        assert!((mixture_pdf(&sym, -1.0).unwrap() - mixture_pdf(&sym, 1.0).unwrap()).abs() < 1e-15);
        let u = ProcessSpec::new(ProcessKind::Uniform { lo: 0.0, hi: 1.0 }, 0).unwrap();
        assert!(matches!(
            mixture_pdf(&u, 0.5),
            Err(Error::WrongProcessTag { .. })
        ));
    }

    #[test]
    fn channel_examples() {
        let identity = ChannelParams {
            kernel: vec![0.0, 0.0, 1.0, 0.0, 0.0],
            a3: 0.0,
            a5: 0.0,
        };
        let f = synthetic_channel(identity, 0.0).unwrap();
        let w = [0.3, -0.2, 0.7, 0.1, 0.5];
        assert_eq!(f.eval(&w, 2), 0.7);

        let cubic = ChannelParams {
            kernel: vec![1.0],
            a3: -0.1,
            a5: 0.0,
        };
        let f = synthetic_channel(cubic, 0.0).unwrap();
        assert!((f.eval(&[1.0], 0) - 0.9).abs() < 1e-15);

        // Full kernel: offset t weighs x_{n-t}; window index 2 is n.
        let full = ChannelParams {
            kernel: vec![0.1, -0.2, 1.0, 0.3, -0.05],
            a3: -0.1,
            a5: 0.02,
        };
        let f = synthetic_channel(full, 0.0).unwrap();
        // offsets -2..2 read x_{n+2}, x_{n+1}, x_n, x_{n-1}, x_{n-2}
        let v = 0.1 * w[4] - 0.2 * w[3] + 1.0 * w[2] + 0.3 * w[1] - 0.05 * w[0];
        let expected = v - 0.1 * v.powi(3) + 0.02 * v.powi(5);
        assert!((f.eval(&w, 2) - expected).abs() < 1e-15);

        assert!(synthetic_channel(
            ChannelParams {
                kernel: vec![1.0; 7],
                a3: 0.0,
                a5: 0.0
            },
            0.0
        )
        .is_err());
    }

    #[test]
    fn process_validation() {
        assert!(ProcessSpec::new(
            ProcessKind::CorrelatedStream {
                correlation: 1.0,
                innovation_sigma: 1.0
            },
            0
        )
        .is_err());
        assert!(ProcessSpec::new(
            ProcessKind::GaussianMixture {
                components: vec![MixtureComponent {
                    mean: 0.0,
                    sigma: 1.0,
                    weight: 0.7
                }],
                support: None
            },
            0
        )
        .is_err());
        assert!(TargetFunction::identity().with_noise(-1.0).is_err());
    }

    #[test]
    fn batch_is_reproducible_and_context_is_honored() {
        let p = ProcessSpec::new(
            ProcessKind::CorrelatedStream {
                correlation: 0.5,
                innovation_sigma: 0.3,
            },
            11,
        )
        .unwrap();
        let ctx = Context { lead: 2, trail: 2 };
        let a = draw_batch(&p, &TargetFunction::identity(), 50, 7, ctx);
        let b = draw_batch(&p, &TargetFunction::identity(), 50, 7, ctx);
        assert_eq!(a, b);
        assert_eq!(a.inputs.len(), 54);
        assert_eq!(a.outputs[0], a.inputs[2]);
        let c = draw_batch(&p, &TargetFunction::identity(), 50, 8, ctx);
        assert!(a.window.1 < c.window.0);
    }
}
