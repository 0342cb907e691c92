//! Monte Carlo ELBO estimates and their reparameterization gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::linalg::{dot, solve_triangular, Matrix, TriangularMode};
use crate::model::{Model, LN_2PI};
use crate::variational::{TauVariational, VariationalState};

/// How smoothing parameters enter the objective.
#[derive(Debug, Clone, PartialEq)]
pub enum TauParams {
    /// Held at the given values; no gradient.
    Fixed(Vec<f64>),
    /// Point estimate optimized jointly with the variational parameters.
    Point(Vec<f64>),
    /// Independent normal variational distribution on the `τ` scale.
    Hyper(TauVariational),
    /// Part of the variational state itself (joint classic family).
    Joint,
}

impl TauParams {
    /// Number of free values in the `τ` gradient.
    pub fn n_free(&self) -> usize {
        match self {
            Self::Fixed(_) | Self::Joint => 0,
            Self::Point(t) => t.len(),
            Self::Hyper(tv) => 2 * tv.dim(),
        }
    }

    pub fn n_tau(&self) -> usize {
        match self {
            Self::Fixed(t) | Self::Point(t) => t.len(),
            Self::Hyper(tv) => tv.dim(),
            Self::Joint => 0,
        }
    }
}

/// Estimator of the entropy part of the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientEstimator {
    /// Full reparameterization gradient, including the analytic entropy term.
    #[default]
    Total,
    /// Path derivative only (score term dropped); zero variance at an exact fit.
    StickingTheLanding,
}

/// Standard-normal draws for one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    /// One row per `τ` draw (empty rows unless in hyper mode).
    pub tau: Vec<Vec<f64>>,
    /// `beta[t][s]` pairs with `tau[t]`.
    pub beta: Vec<Vec<Vec<f64>>>,
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(
        rng: &mut R,
        n_tau_draws: usize,
        n_beta_draws: usize,
        tau_dim: usize,
        dim: usize,
    ) -> Self {
        let mut tau = Vec::with_capacity(n_tau_draws);
        let mut beta = Vec::with_capacity(n_tau_draws);
        for _ in 0..n_tau_draws {
            tau.push((0..tau_dim).map(|_| rng.sample(StandardNormal)).collect());
            beta.push((0..n_beta_draws).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect());
        }
        Self { tau, beta }
    }

    /// Noise layout matching the state and `τ` mode.
    pub fn for_objective<R: Rng + ?Sized>(
        rng: &mut R,
        state: &VariationalState,
        tau: &TauParams,
        model: &Model,
        samples: usize,
        samples_beta: usize,
        samples_tau: usize,
    ) -> Self {
        let dim = match state {
            VariationalState::ClassicJoint(s) => s.dim,
            _ => model.q(),
        };
        match tau {
            TauParams::Hyper(tv) => Self::draw(rng, samples_tau, samples_beta, tv.dim(), dim),
            _ => Self::draw(rng, 1, samples, 0, dim),
        }
    }

    pub fn count(&self) -> usize {
        self.beta.iter().map(Vec::len).sum()
    }
}

/// Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboValue {
    pub mean: f64,
    pub se: f64,
}

impl ElboValue {
    fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    pub value: ElboValue,
    /// Gradient over the flattened variational state.
    pub state: Vec<f64>,
    /// Gradient over the free `τ` values: `τ` (point) or `(m, log s)` (hyper).
    pub tau: Vec<f64>,
}

fn tau_for_draw(tau: &TauParams, eps: &[f64]) -> Vec<f64> {
    match tau {
        TauParams::Fixed(t) | TauParams::Point(t) => t.clone(),
        TauParams::Hyper(tv) => tv.sample(eps),
        TauParams::Joint => Vec::new(),
    }
}

fn check_layout(state: &VariationalState, tau: &TauParams, model: &Model) -> Result<(), InferenceError> {
    let joint = matches!(state, VariationalState::ClassicJoint(_));
    if joint != matches!(tau, TauParams::Joint) {
        return Err(InferenceError::InvalidConfig(
            "the joint classic family carries its own smoothing parameters (and only it does)".into(),
        ));
    }
    if !joint && tau.n_tau() != model.n_tau() {
        return Err(InferenceError::InvalidConfig(format!(
            "model has {} smoothing parameters, got {}",
            model.n_tau(),
            tau.n_tau()
        )));
    }
    Ok(())
}

/// Evaluates the ELBO and (optionally) its gradient under fixed noise.
fn evaluate(
    state: &VariationalState,
    tau: &TauParams,
    model: &Model,
    noise: &Noise,
    gradient: Option<GradientEstimator>,
) -> Result<(ElboValue, Vec<f64>, Vec<f64>), InferenceError> {
    check_layout(state, tau, model)?;
    let q = model.q();
    let n_tau = model.n_tau();
    let total = noise.count() as f64;
    let want_grad = gradient.is_some();
    let mut grad_state = vec![0.0; if want_grad { state.n_params() } else { 0 }];
    let mut grad_tau = vec![0.0; if want_grad { tau.n_free() } else { 0 }];
    let mut values = Vec::with_capacity(noise.count());
    let mut g_beta = vec![0.0; q];
    let mut g_tau = vec![0.0; n_tau];
    let n_draws = noise.tau.len();
    for (tau_eps, beta_eps) in noise.tau.iter().zip(&noise.beta) {
        let tau_t = tau_for_draw(tau, tau_eps);
        let log_q_tau = match tau {
            TauParams::Hyper(tv) => tv.log_density(&tau_t),
            _ => 0.0,
        };
        let built = state.build_with_cache(&tau_t, model)?;
        let post = &built.posterior;
        let dim = post.dim();
        let chol = &post.chol;
        let log_det = chol.log_diag_sum();
        let w = 1.0 / total;
        let mut mean_bar = vec![0.0; dim];
        let mut chol_bar = Matrix::zeros(dim, dim);
        let mut tau_bar = vec![0.0; n_tau];
        for eps in beta_eps {
            let x = solve_triangular(chol, eps, TriangularMode::LowerTransposed)?;
            let beta: Vec<f64> = post.mean.iter().zip(&x).map(|(m, v)| m + v).collect();
            let (b, t) = match tau {
                TauParams::Joint => beta.split_at(q),
                _ => (beta.as_slice(), tau_t.as_slice()),
            };
            let log_joint = model.log_joint_grad(b, t, &mut g_beta, &mut g_tau);
            let log_q = log_det - 0.5 * dim as f64 * LN_2PI - 0.5 * dot(eps, eps);
            let value = log_joint - log_q - log_q_tau;
            if !value.is_finite() {
                return Err(InferenceError::NonFiniteObjective);
            }
            values.push(value);
            let Some(estimator) = gradient else { continue };
            let mut adj: Vec<f64> = match tau {
                TauParams::Joint => g_beta.iter().chain(&g_tau).copied().collect(),
                _ => g_beta.clone(),
            };
            if estimator == GradientEstimator::StickingTheLanding {
                let le = chol.matvec(eps);
                adj.iter_mut().zip(&le).for_each(|(a, v)| *a += v);
            }
            for (mb, a) in mean_bar.iter_mut().zip(&adj) {
                *mb += w * a;
            }
            // β = m + L⁻ᵀε ⇒ L̄ −= lower(x (L⁻¹ adj)ᵀ).
            let a = solve_triangular(chol, &adj, TriangularMode::Lower)?;
            for i in 0..dim {
                let xi = w * x[i];
                let row = chol_bar.row_mut(i);
                for j in 0..=i {
                    row[j] -= xi * a[j];
                }
            }
            if !matches!(tau, TauParams::Joint) {
                for (tb, g) in tau_bar.iter_mut().zip(&g_tau) {
                    *tb += w * g;
                }
            }
        }
        if !want_grad {
            continue;
        }
        if gradient == Some(GradientEstimator::Total) {
            let share = beta_eps.len() as f64 * w;
            for k in 0..dim {
                chol_bar[(k, k)] -= share / chol.get(k, k);
            }
        }
        state.backward(&built, &tau_t, model, &mean_bar, &chol_bar, &mut grad_state, &mut tau_bar)?;
        match tau {
            TauParams::Point(_) => {
                for (g, tb) in grad_tau.iter_mut().zip(&tau_bar) {
                    *g += tb;
                }
            }
            TauParams::Hyper(tv) => {
                let k = tv.dim();
                for j in 0..k {
                    grad_tau[j] += tau_bar[j];
                    grad_tau[k + j] += tau_bar[j] * tau_eps[j] * tv.log_s[j].exp() + 1.0 / n_draws as f64;
                }
            }
            TauParams::Fixed(_) | TauParams::Joint => {}
        }
    }
    if grad_state.iter().chain(&grad_tau).any(|g| !g.is_finite()) {
        return Err(InferenceError::NonFiniteGradient);
    }
    Ok((ElboValue::from_samples(&values), grad_state, grad_tau))
}

/// ELBO estimate under the given noise.
pub fn elbo_with_noise(
    state: &VariationalState,
    tau: &TauParams,
    model: &Model,
    noise: &Noise,
) -> Result<ElboValue, InferenceError> {
    Ok(evaluate(state, tau, model, noise, None)?.0)
}

/// ELBO estimate and gradient from the same noise.
pub fn elbo_gradient_with_noise(
    state: &VariationalState,
    tau: &TauParams,
    model: &Model,
    noise: &Noise,
    estimator: GradientEstimator,
) -> Result<ElboGradient, InferenceError> {
    let (value, state_grad, tau_grad) = evaluate(state, tau, model, noise, Some(estimator))?;
    Ok(ElboGradient { value, state: state_grad, tau: tau_grad })
}

/// ELBO estimate from `samples` fresh draws (`samples` β draws for each of
/// `samples_tau` τ draws in hyper mode).
pub fn elbo_estimate<R: Rng + ?Sized>(
    state: &VariationalState,
    tau: &TauParams,
    model: &Model,
    samples: usize,
    samples_tau: usize,
    rng: &mut R,
) -> Result<ElboValue, InferenceError> {
    if samples == 0 || samples_tau == 0 {
        return Err(InferenceError::InvalidConfig("sample counts must be at least 1".into()));
    }
    let noise = Noise::for_objective(rng, state, tau, model, samples, samples, samples_tau);
    elbo_with_noise(state, tau, model, &noise)
}

pub fn elbo_gradient<R: Rng + ?Sized>(
    state: &VariationalState,
    tau: &TauParams,
    model: &Model,
    samples: usize,
    samples_tau: usize,
    estimator: GradientEstimator,
    rng: &mut R,
) -> Result<ElboGradient, InferenceError> {
    if samples == 0 || samples_tau == 0 {
        return Err(InferenceError::InvalidConfig("sample counts must be at least 1".into()));
    }
    let noise = Noise::for_objective(rng, state, tau, model, samples, samples, samples_tau);
    elbo_gradient_with_noise(state, tau, model, &noise, estimator)
}

/// Writes the free `τ` values (the layout of [`ElboGradient::tau`]).
pub fn tau_free_values(tau: &TauParams) -> Vec<f64> {
    match tau {
        TauParams::Fixed(_) | TauParams::Joint => Vec::new(),
        TauParams::Point(t) => t.clone(),
        TauParams::Hyper(tv) => tv.m.iter().chain(&tv.log_s).copied().collect(),
    }
}

pub fn set_tau_free_values(tau: &mut TauParams, values: &[f64]) {
    match tau {
        TauParams::Fixed(_) | TauParams::Joint => {}
        TauParams::Point(t) => t.copy_from_slice(values),
        TauParams::Hyper(tv) => {
            let k = tv.dim();
            tv.m.copy_from_slice(&values[..k]);
            tv.log_s.copy_from_slice(&values[k..]);
        }
    }
}
