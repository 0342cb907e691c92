//! Seeded synthetic data for the logistic and gamma simulation scenarios.
//!
//! Every scenario draws from ChaCha8 seeded with the scenario seed, using a
//! separate stream per variable: stream 0 for the first covariate, 1 for the
//! second, 2 for the response.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("invalid scenario constant: {0}")]
    InvalidConstant(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

const STREAM_X1: u64 = 0;
const STREAM_X2: u64 = 1;
const STREAM_Y: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws from a mixture of uniforms on equal-width consecutive intervals
/// covering `(lo, hi)`.
fn uniform_mixture<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, weights: &[f64]) -> f64 {
    let width = (hi - lo) / weights.len() as f64;
    let u: f64 = rng.random();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut k = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            k = i;
            break;
        }
    }
    lo + width * (k as f64 + rng.random::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    LogisticSparse,
    GammaDistreg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticScenario {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "LogisticScenario::default_x1_weights")]
    pub x1_weights: Vec<f64>,
    /// Weights of the `z₂` components on `(−π, −π/3)` and `(−π/3, 0)`.
    #[serde(default = "LogisticScenario::default_z2_weights")]
    pub z2_weights: Vec<f64>,
    #[serde(default = "LogisticScenario::default_rho")]
    pub rho: f64,
    #[serde(default = "LogisticScenario::default_frequency")]
    pub frequency: f64,
    #[serde(default = "LogisticScenario::default_clamp")]
    pub clamp: f64,
}

impl LogisticScenario {
    fn default_x1_weights() -> Vec<f64> {
        vec![9.0 / 20.0, 2.0 / 20.0, 9.0 / 20.0]
    }
    fn default_z2_weights() -> Vec<f64> {
        vec![18.0 / 20.0, 2.0 / 20.0]
    }
    fn default_rho() -> f64 {
        -0.7
    }
    fn default_frequency() -> f64 {
        1.75
    }
    fn default_clamp() -> f64 {
        1e-6
    }

    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            x1_weights: Self::default_x1_weights(),
            z2_weights: Self::default_z2_weights(),
            rho: Self::default_rho(),
            frequency: Self::default_frequency(),
            clamp: Self::default_clamp(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::EmptySample);
        }
        let bad_weights =
            |w: &[f64]| w.is_empty() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0;
        if bad_weights(&self.x1_weights) || bad_weights(&self.z2_weights) || self.z2_weights.len() != 2 {
            return Err(SimError::InvalidConstant("mixture weights must be non-negative with positive sum".into()));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(SimError::InvalidConstant(format!("rho = {} outside [-1, 1]", self.rho)));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(SimError::InvalidConstant(format!("clamp = {} outside (0, 0.5)", self.clamp)));
        }
        Ok(())
    }

    /// Unclamped success signal `sin(f x₁) + cos(−f x₂)`.
    pub fn signal(&self, x1: f64, x2: f64) -> f64 {
        (self.frequency * x1).sin() + (-self.frequency * x2).cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaScenario {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "GammaScenario::default_mean_frequency")]
    pub mean_frequency: f64,
    #[serde(default = "GammaScenario::default_variance_frequency")]
    pub variance_frequency: f64,
}

impl GammaScenario {
    fn default_mean_frequency() -> f64 {
        1.75
    }
    fn default_variance_frequency() -> f64 {
        2.0
    }

    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            mean_frequency: Self::default_mean_frequency(),
            variance_frequency: Self::default_variance_frequency(),
        }
    }

    /// `μ(x) = 3 + exp(sin(f x))`.
    pub fn mean(&self, x: f64) -> f64 {
        3.0 + (self.mean_frequency * x).sin().exp()
    }

    /// `σ²(x) = exp(cos(−g x))²`.
    pub fn variance(&self, x: f64) -> f64 {
        (-self.variance_frequency * x).cos().exp().powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Scenario {
    LogisticSparse(LogisticScenario),
    GammaDistreg(GammaScenario),
}

impl Scenario {
    pub fn name(&self) -> ScenarioName {
        match self {
            Self::LogisticSparse(_) => ScenarioName::LogisticSparse,
            Self::GammaDistreg(_) => ScenarioName::GammaDistreg,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::LogisticSparse(s) => s.seed = seed,
            Self::GammaDistreg(s) => s.seed = seed,
        }
        out
    }

    pub fn generate(&self) -> Result<Simulated, SimError> {
        match self {
            Self::LogisticSparse(s) => gen_logistic(s),
            Self::GammaDistreg(s) => gen_gamma(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Logistic { probability: Vec<f64> },
    Gamma { mean: Vec<f64>, variance: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    pub scenario: Scenario,
    pub rng: String,
    /// Fraction of observations whose success signal was clamped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamp_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub truth: Truth,
    pub metadata: SimMetadata,
}

const RNG_LOGISTIC: &str = "chacha8, seed_from_u64(seed), stream 0 = x1, 1 = x2, 2 = y";
const RNG_GAMMA: &str = "chacha8, seed_from_u64(seed), stream 0 = x, 2 = y";

/// Logistic scenario: `x₁` from a uniform mixture on thirds of `(0, π)`,
/// `z₂` from a uniform mixture on `(−π, −π/3)` and `(−π/3, 0)`,
/// `x₂ = ρx₁ + √(1−ρ²)z₂`, success probability the clamped signal.
pub fn gen_logistic(s: &LogisticScenario) -> Result<Simulated, SimError> {
    s.validate()?;
    let mut rx1 = stream(s.seed, STREAM_X1);
    let mut rx2 = stream(s.seed, STREAM_X2);
    let mut ry = stream(s.seed, STREAM_Y);
    let mut x1 = Vec::with_capacity(s.n);
    let mut x2 = Vec::with_capacity(s.n);
    let mut y = Vec::with_capacity(s.n);
    let mut prob = Vec::with_capacity(s.n);
    let mut clamped = 0usize;
    let c = (1.0 - s.rho * s.rho).sqrt();
    let z2_bounds = [(-PI, -PI / 3.0), (-PI / 3.0, 0.0)];
    for _ in 0..s.n {
        let a = uniform_mixture(&mut rx1, 0.0, PI, &s.x1_weights);
        let k = usize::from(rx2.random::<f64>() >= s.z2_weights[0] / (s.z2_weights[0] + s.z2_weights[1]));
        let (lo, hi) = z2_bounds[k];
        let z = lo + (hi - lo) * rx2.random::<f64>();
        let b = s.rho * a + c * z;
        let sig = s.signal(a, b);
        let p = sig.clamp(s.clamp, 1.0 - s.clamp);
        if p != sig {
            clamped += 1;
        }
        let draw = Bernoulli::new(p).expect("probability inside (0, 1)").sample(&mut ry);
        x1.push(a);
        x2.push(b);
        y.push(f64::from(u8::from(draw)));
        prob.push(p);
    }
    let data = Dataset::new().with_column("y", y)?.with_column("x1", x1)?.with_column("x2", x2)?;
    Ok(Simulated {
        data,
        truth: Truth::Logistic { probability: prob },
        metadata: SimMetadata {
            scenario: Scenario::LogisticSparse(s.clone()),
            rng: RNG_LOGISTIC.into(),
            clamp_rate: Some(clamped as f64 / s.n as f64),
        },
    })
}

/// Gamma scenario: `x ~ U(0, π)`, response Gamma with mean `μ(x)` and
/// variance `σ²(x)`.
pub fn gen_gamma(s: &GammaScenario) -> Result<Simulated, SimError> {
    if s.n == 0 {
        return Err(SimError::EmptySample);
    }
    let mut rx = stream(s.seed, STREAM_X1);
    let mut ry = stream(s.seed, STREAM_Y);
    let mut x = Vec::with_capacity(s.n);
    let mut y = Vec::with_capacity(s.n);
    let mut mean = Vec::with_capacity(s.n);
    let mut variance = Vec::with_capacity(s.n);
    for _ in 0..s.n {
        let xi = PI * rx.random::<f64>();
        let mu = s.mean(xi);
        let var = s.variance(xi);
        let shape = mu * mu / var;
        let rate = mu / var;
        let yi: f64 = Gamma::new(shape, 1.0 / rate).expect("positive shape and scale").sample(&mut ry);
        x.push(xi);
        y.push(yi.max(f64::MIN_POSITIVE));
        mean.push(mu);
        variance.push(var);
    }
    let data = Dataset::new().with_column("y", y)?.with_column("x", x)?;
    Ok(Simulated {
        data,
        truth: Truth::Gamma { mean, variance },
        metadata: SimMetadata { scenario: Scenario::GammaDistreg(s.clone()), rng: RNG_GAMMA.into(), clamp_rate: None },
    })
}

/// Values of `f` on `grid` minus their mean over `reference` points.
pub fn centered_on(f: impl Fn(f64) -> f64, grid: &[f64], reference: &[f64]) -> Vec<f64> {
    let c = reference.iter().map(|&x| f(x)).sum::<f64>() / reference.len() as f64;
    grid.iter().map(|&x| f(x) - c).collect()
}
