//! Response families, priors and the log-joint density shared by the
//! variational fits and the reference samplers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::basis::{assemble_design, BasisError, Design, DesignBlock, TermSpec};
use crate::data::{DataError, Dataset};
use crate::linalg::{dot, Matrix};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("response value {value} at row {row} is outside the support of {family}")]
    SupportViolation { family: &'static str, row: usize, value: f64 },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("predictor is not finite")]
    NonFinitePredictor,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Response distribution with its parameter links.
///
/// Predictor columns, in order:
/// - `Gaussian`: mean (identity), standard deviation (log)
/// - `GaussianKnownSd`: mean (identity); the noise sd is fixed
/// - `BernoulliLogit`: success probability (logit)
/// - `GammaMeanVar`: mean (log), variance (log)
/// - `NegbinMeanDisp`: mean (log), dispersion δ (log), `Var = μ + μ²/δ`
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseFamily {
    Gaussian,
    GaussianKnownSd { sd: f64 },
    BernoulliLogit,
    GammaMeanVar,
    NegbinMeanDisp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Gaussian,
    GaussianKnownSd,
    BernoulliLogit,
    #[serde(rename = "gamma_meanvar")]
    GammaMeanVar,
    #[serde(rename = "negbin_meandisp")]
    NegbinMeanDisp,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Shape and rate of a gamma distribution with the given mean and variance.
pub fn gamma_shape_rate(mean: f64, variance: f64) -> (f64, f64) {
    (mean * mean / variance, mean / variance)
}

/// Mean and variance of a gamma distribution with the given shape and rate.
pub fn gamma_mean_var(shape: f64, rate: f64) -> (f64, f64) {
    (shape / rate, shape / (rate * rate))
}

impl ResponseFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::GaussianKnownSd { .. } => "gaussian_known_sd",
            Self::BernoulliLogit => "bernoulli_logit",
            Self::GammaMeanVar => "gamma_meanvar",
            Self::NegbinMeanDisp => "negbin_meandisp",
        }
    }

    pub fn kind(&self) -> FamilyName {
        match self {
            Self::Gaussian => FamilyName::Gaussian,
            Self::GaussianKnownSd { .. } => FamilyName::GaussianKnownSd,
            Self::BernoulliLogit => FamilyName::BernoulliLogit,
            Self::GammaMeanVar => FamilyName::GammaMeanVar,
            Self::NegbinMeanDisp => FamilyName::NegbinMeanDisp,
        }
    }

    pub fn from_name(name: FamilyName, noise_sd: Option<f64>) -> Result<Self, ModelError> {
        match (name, noise_sd) {
            (FamilyName::GaussianKnownSd, Some(sd)) if sd > 0.0 && sd.is_finite() => Ok(Self::GaussianKnownSd { sd }),
            (FamilyName::GaussianKnownSd, _) => {
                Err(ModelError::InvalidSpec("gaussian_known_sd needs a positive finite noise_sd".into()))
            }
            (_, Some(_)) => {
                Err(ModelError::InvalidSpec(format!("noise_sd is only valid for gaussian_known_sd, not {name:?}")))
            }
            (FamilyName::Gaussian, None) => Ok(Self::Gaussian),
            (FamilyName::BernoulliLogit, None) => Ok(Self::BernoulliLogit),
            (FamilyName::GammaMeanVar, None) => Ok(Self::GammaMeanVar),
            (FamilyName::NegbinMeanDisp, None) => Ok(Self::NegbinMeanDisp),
        }
    }

    pub fn noise_sd(&self) -> Option<f64> {
        match self {
            Self::GaussianKnownSd { sd } => Some(*sd),
            _ => None,
        }
    }

    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            Self::Gaussian => &["mu", "sigma"],
            Self::GaussianKnownSd { .. } => &["mu"],
            Self::BernoulliLogit => &["p"],
            Self::GammaMeanVar => &["mu", "sigma2"],
            Self::NegbinMeanDisp => &["mu", "delta"],
        }
    }

    pub fn n_params(&self) -> usize {
        self.parameter_names().len()
    }

    pub fn in_support(&self, y: f64) -> bool {
        match self {
            Self::Gaussian | Self::GaussianKnownSd { .. } => y.is_finite(),
            Self::BernoulliLogit => y == 0.0 || y == 1.0,
            Self::GammaMeanVar => y.is_finite() && y > 0.0,
            Self::NegbinMeanDisp => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        }
    }

    pub fn check_support(&self, y: &[f64]) -> Result<(), ModelError> {
        match y.iter().position(|&v| !self.in_support(v)) {
            Some(row) => Err(ModelError::SupportViolation { family: self.name(), row, value: y[row] }),
            None => Ok(()),
        }
    }

    /// Distribution parameters `ν = h(η)` on their natural scale.
    pub fn response(&self, eta: &[f64]) -> Vec<f64> {
        match self {
            Self::Gaussian => vec![eta[0], eta[1].exp()],
            Self::GaussianKnownSd { .. } => vec![eta[0]],
            Self::BernoulliLogit => vec![sigmoid(eta[0])],
            Self::GammaMeanVar | Self::NegbinMeanDisp => vec![eta[0].exp(), eta[1].exp()],
        }
    }

    /// `ln p(y | h(η))` for one observation.
    pub fn obs_log_density(&self, y: f64, eta: &[f64]) -> f64 {
        match *self {
            Self::Gaussian => {
                let z = (y - eta[0]) * (-eta[1]).exp();
                -0.5 * LN_2PI - eta[1] - 0.5 * z * z
            }
            Self::GaussianKnownSd { sd } => {
                let z = (y - eta[0]) / sd;
                -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
            }
            Self::BernoulliLogit => y * eta[0] - softplus(eta[0]),
            Self::GammaMeanVar => {
                let ln_k = 2.0 * eta[0] - eta[1];
                let ln_r = eta[0] - eta[1];
                let k = ln_k.exp();
                k * ln_r - ln_gamma(k) + (k - 1.0) * y.ln() - ln_r.exp() * y
            }
            Self::NegbinMeanDisp => {
                let delta = eta[1].exp();
                let ln_sum = log_add_exp(eta[0], eta[1]);
                ln_gamma(y + delta) - ln_gamma(delta) - ln_gamma(y + 1.0)
                    + delta * (eta[1] - ln_sum)
                    + y * (eta[0] - ln_sum)
            }
        }
    }

    /// Log density and its gradient with respect to `η` (written to `grad`).
    pub fn obs_log_density_grad(&self, y: f64, eta: &[f64], grad: &mut [f64]) -> f64 {
        match *self {
            Self::Gaussian => {
                let inv_sd = (-eta[1]).exp();
                let r = y - eta[0];
                let z = r * inv_sd;
                grad[0] = r * inv_sd * inv_sd;
                grad[1] = z * z - 1.0;
                -0.5 * LN_2PI - eta[1] - 0.5 * z * z
            }
            Self::GaussianKnownSd { sd } => {
                let r = y - eta[0];
                grad[0] = r / (sd * sd);
                -0.5 * LN_2PI - sd.ln() - 0.5 * (r / sd) * (r / sd)
            }
            Self::BernoulliLogit => {
                grad[0] = y - sigmoid(eta[0]);
                y * eta[0] - softplus(eta[0])
            }
            Self::GammaMeanVar => {
                let ln_k = 2.0 * eta[0] - eta[1];
                let ln_r = eta[0] - eta[1];
                let k = ln_k.exp();
                let ry = ln_r.exp() * y;
                let ln_y = y.ln();
                let a = ln_r - digamma(k) + ln_y;
                grad[0] = 2.0 * k * a + (k - ry);
                grad[1] = -k * a - (k - ry);
                k * ln_r - ln_gamma(k) + (k - 1.0) * ln_y - ry
            }
            Self::NegbinMeanDisp => {
                let mu = eta[0].exp();
                let delta = eta[1].exp();
                let ln_sum = log_add_exp(eta[0], eta[1]);
                let sum = mu + delta;
                grad[0] = delta * (y - mu) / sum;
                grad[1] = delta * (digamma(y + delta) - digamma(delta) + eta[1] + 1.0 - ln_sum - (delta + y) / sum);
                ln_gamma(y + delta) - ln_gamma(delta) - ln_gamma(y + 1.0)
                    + delta * (eta[1] - ln_sum)
                    + y * (eta[0] - ln_sum)
            }
        }
    }

    /// Crude link-scale starting predictor for every observation.
    pub fn initial_predictor(&self, y: &[f64]) -> Matrix {
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64 } else { 1.0 };
        let var = if var > 0.0 { var } else { 1.0 };
        let p = self.n_params();
        let mut eta = Matrix::zeros(n, p);
        for (i, &yi) in y.iter().enumerate() {
            let row = eta.row_mut(i);
            match self {
                Self::Gaussian => {
                    row[0] = yi;
                    row[1] = 0.5 * var.ln();
                }
                Self::GaussianKnownSd { .. } => row[0] = yi,
                Self::BernoulliLogit => {
                    let pc = yi.clamp(0.1, 0.9);
                    row[0] = (pc / (1.0 - pc)).ln();
                }
                Self::GammaMeanVar => {
                    row[0] = yi.ln();
                    row[1] = var.ln();
                }
                Self::NegbinMeanDisp => {
                    let delta = if var > mean { mean * mean / (var - mean) } else { 100.0 };
                    row[0] = (yi + 0.5).ln();
                    row[1] = delta.clamp(0.1, 100.0).ln();
                }
            }
        }
        eta
    }
}

/// Σᵢ ln p(yᵢ | h(ηᵢ)) for an `N × P` predictor matrix.
pub fn log_likelihood(family: &ResponseFamily, y: &[f64], eta: &Matrix) -> Result<f64, ModelError> {
    if eta.rows() != y.len() {
        return Err(ModelError::DimensionMismatch { expected: y.len(), found: eta.rows() });
    }
    if eta.cols() != family.n_params() {
        return Err(ModelError::DimensionMismatch { expected: family.n_params(), found: eta.cols() });
    }
    if eta.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinitePredictor);
    }
    family.check_support(y)?;
    Ok(y.iter().enumerate().map(|(i, &yi)| family.obs_log_density(yi, eta.row(i))).sum())
}

/// Log-gamma hyperprior on `τ = ln λ²`, i.e. `λ² ~ Gamma(concentration, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperPrior {
    pub concentration: f64,
    pub rate: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        Self { concentration: 1.0, rate: 0.01 }
    }
}

impl HyperPrior {
    fn log_normalizer(&self) -> f64 {
        ln_gamma(self.concentration) - self.concentration * self.rate.ln()
    }
}

pub fn log_hyperprior(tau: &[f64], prior: &HyperPrior) -> f64 {
    let (a, b) = (prior.concentration, prior.rate);
    tau.iter().map(|&t| a * t - b * t.exp()).sum::<f64>() - tau.len() as f64 * prior.log_normalizer()
}

fn block_quadratic(block: &DesignBlock, beta: &[f64]) -> f64 {
    let b = &beta[block.range()];
    dot(b, &block.k.matvec(b))
}

/// Σ over penalized blocks of `(rank/2)τ − (e^τ/2)βᵀKβ` plus the Gaussian
/// normalizing constant `−(rank/2)ln 2π + ½ ln pdet(K)`. Unpenalized blocks
/// have a flat prior and contribute nothing.
pub fn log_prior_beta(beta: &[f64], tau: &[f64], blocks: &[DesignBlock]) -> f64 {
    let mut total = 0.0;
    for block in blocks {
        if let Some(t) = block.tau_index {
            let rank = block.penalty_rank as f64;
            total += 0.5 * rank * tau[t] - 0.5 * tau[t].exp() * block_quadratic(block, beta) - 0.5 * rank * LN_2PI
                + 0.5 * block.log_pdet;
        }
    }
    total
}

/// A model specification: response family plus one ordered term list per
/// distribution parameter (the intercept is implicit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecRepr", into = "ModelSpecRepr")]
pub struct ModelSpec {
    pub family: ResponseFamily,
    pub response: String,
    pub parameters: Vec<Vec<TermSpec>>,
    pub hyperprior: HyperPrior,
}

/// On-disk form: terms keyed by parameter name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpecRepr {
    family: FamilyName,
    #[serde(default = "default_response")]
    response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_sd: Option<f64>,
    #[serde(default)]
    terms: BTreeMap<String, Vec<TermSpec>>,
    #[serde(default)]
    hyperprior: HyperPrior,
}

fn default_response() -> String {
    "y".into()
}

impl TryFrom<ModelSpecRepr> for ModelSpec {
    type Error = ModelError;

    fn try_from(r: ModelSpecRepr) -> Result<Self, ModelError> {
        let family = ResponseFamily::from_name(r.family, r.noise_sd)?;
        let names = family.parameter_names();
        if let Some(unknown) = r.terms.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(ModelError::InvalidSpec(format!(
                "unknown parameter `{unknown}` for family {} (expected one of {names:?})",
                family.name()
            )));
        }
        let parameters = names.iter().map(|n| r.terms.get(*n).cloned().unwrap_or_default()).collect();
        let spec = ModelSpec { family, response: r.response, parameters, hyperprior: r.hyperprior };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ModelSpec> for ModelSpecRepr {
    fn from(s: ModelSpec) -> Self {
        let names = s.family.parameter_names();
        Self {
            family: s.family.kind(),
            response: s.response,
            noise_sd: s.family.noise_sd(),
            terms: names.iter().map(|n| n.to_string()).zip(s.parameters).filter(|(_, t)| !t.is_empty()).collect(),
            hyperprior: s.hyperprior,
        }
    }
}

impl ModelSpec {
    pub fn new(family: ResponseFamily, response: &str, parameters: Vec<Vec<TermSpec>>) -> Self {
        Self { family, response: response.to_string(), parameters, hyperprior: HyperPrior::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.parameters.len() != self.family.n_params() {
            return Err(ModelError::InvalidSpec(format!(
                "family {} has {} parameters, got {} term lists",
                self.family.name(),
                self.family.n_params(),
                self.parameters.len()
            )));
        }
        if !(self.hyperprior.concentration > 0.0 && self.hyperprior.rate > 0.0) {
            return Err(ModelError::InvalidSpec("hyperprior concentration and rate must be positive".into()));
        }
        for terms in &self.parameters {
            for t in terms {
                t.validate()?;
            }
        }
        Ok(())
    }
}

/// A model bound to data: response vector, assembled design and priors.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub y: Vec<f64>,
    pub design: Design,
}

impl Model {
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Self, ModelError> {
        spec.validate()?;
        let y = data.column(&spec.response)?.to_vec();
        if y.is_empty() {
            return Err(ModelError::Data(DataError::Empty));
        }
        spec.family.check_support(&y)?;
        let design = assemble_design(spec, data)?;
        Ok(Self { spec: spec.clone(), y, design })
    }

    pub fn family(&self) -> &ResponseFamily {
        &self.spec.family
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.design.q
    }

    pub fn n_tau(&self) -> usize {
        self.design.n_tau
    }

    pub fn n_params(&self) -> usize {
        self.design.params.len()
    }

    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        let eta = self.design.predictor(beta);
        (0..self.n()).map(|i| self.spec.family.obs_log_density(self.y[i], eta.row(i))).sum()
    }

    pub fn log_prior_beta(&self, beta: &[f64], tau: &[f64]) -> f64 {
        log_prior_beta(beta, tau, &self.design.blocks)
    }

    pub fn log_hyperprior(&self, tau: &[f64]) -> f64 {
        log_hyperprior(tau, &self.spec.hyperprior)
    }

    pub fn log_joint(&self, beta: &[f64], tau: &[f64]) -> f64 {
        self.log_likelihood(beta) + self.log_prior_beta(beta, tau) + self.log_hyperprior(tau)
    }

    /// Log joint and its gradients with respect to `β` and `τ`.
    pub fn log_joint_grad(&self, beta: &[f64], tau: &[f64], g_beta: &mut [f64], g_tau: &mut [f64]) -> f64 {
        let p = self.n_params();
        let eta = self.design.predictor(beta);
        let mut d_eta = Matrix::zeros(self.n(), p);
        let mut ll = 0.0;
        for i in 0..self.n() {
            ll += self.spec.family.obs_log_density_grad(self.y[i], eta.row(i), d_eta.row_mut(i));
        }
        g_beta.iter_mut().for_each(|g| *g = 0.0);
        g_tau.iter_mut().for_each(|g| *g = 0.0);
        self.design.predictor_adjoint(&d_eta, g_beta);
        let hp = &self.spec.hyperprior;
        for block in self.design.penalized_blocks() {
            let t = block.tau_index.expect("penalized");
            let b = &beta[block.range()];
            let kb = block.k.matvec(b);
            let lam = tau[t].exp();
            for (g, v) in g_beta[block.range()].iter_mut().zip(&kb) {
                *g -= lam * v;
            }
            g_tau[t] = 0.5 * block.penalty_rank as f64 - 0.5 * lam * dot(b, &kb) + hp.concentration - hp.rate * lam;
        }
        ll + self.log_prior_beta(beta, tau) + self.log_hyperprior(tau)
    }

    /// Prior precision `K_λ` for the given `τ`.
    pub fn prior_precision(&self, tau: &[f64]) -> Matrix {
        let q = self.q();
        let mut k = Matrix::zeros(q, q);
        for block in self.design.penalized_blocks() {
            let lam = tau[block.tau_index.expect("penalized")].exp();
            let o = block.offset;
            for a in 0..block.width() {
                for b in 0..block.width() {
                    k[(o + a, o + b)] = lam * block.k[(a, b)];
                }
            }
        }
        k
    }

    pub fn initial_predictor(&self) -> Matrix {
        self.spec.family.initial_predictor(&self.y)
    }
}

/// Sum of the three log-density components.
pub fn log_joint(model: &Model, beta: &[f64], tau: &[f64]) -> f64 {
    model.log_joint(beta, tau)
}

/// Standard normal log density, used across modules.
pub fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * LN_2PI - 0.5 * z * z
}
