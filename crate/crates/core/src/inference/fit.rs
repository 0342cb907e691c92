use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, OptimizerState};
use super::elbo::{elbo_gradient_with_noise, GradientEstimator, Noise, TauParams};
use super::InferenceError;
use crate::model::Model;
use crate::variational::{FamilyKind, GaussianPosterior, TauVariational, VariationalState};

/// Treatment of the smoothing parameters during a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    Fixed,
    Point,
    Hyper,
}

fn default_samples() -> usize {
    64
}
fn default_samples_beta() -> usize {
    32
}
fn default_samples_tau() -> usize {
    2
}
fn default_epochs() -> usize {
    2000
}
fn default_init_log_s() -> f64 {
    -1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub family: FamilyKind,
    pub tau_mode: TauMode,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Draws per epoch outside hyper mode.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Coefficient draws per `τ` draw in hyper mode.
    #[serde(default = "default_samples_beta")]
    pub samples_beta: usize,
    #[serde(default = "default_samples_tau")]
    pub samples_tau: usize,
    /// Hyper mode: epochs of point estimation before the variational stage
    /// (default three quarters of `epochs`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_epochs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Starting value for every `τ` (point and hyper modes).
    #[serde(default)]
    pub initial_tau: f64,
    /// Values used in fixed mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_tau: Option<Vec<f64>>,
    /// Starting `log s` of the hyper-variational stage.
    #[serde(default = "default_init_log_s")]
    pub initial_log_s: f64,
    #[serde(default)]
    pub estimator: GradientEstimator,
    /// Epoch counts after which the posterior is snapshotted.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
}

impl FitConfig {
    pub fn new(family: FamilyKind, tau_mode: TauMode, epochs: usize, seed: u64) -> Self {
        Self {
            family,
            tau_mode,
            epochs,
            samples: default_samples(),
            samples_beta: default_samples_beta(),
            samples_tau: default_samples_tau(),
            stage1_epochs: None,
            seed,
            adam: AdamConfig::default(),
            initial_tau: 0.0,
            fixed_tau: None,
            initial_log_s: default_init_log_s(),
            estimator: GradientEstimator::Total,
            checkpoints: Vec::new(),
        }
    }

    pub fn stage1(&self) -> usize {
        match self.tau_mode {
            TauMode::Hyper => self.stage1_epochs.unwrap_or(self.epochs * 3 / 4),
            _ => self.epochs,
        }
    }

    pub fn validate(&self, model: &Model) -> Result<(), InferenceError> {
        let bad = |m: String| Err(InferenceError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.samples == 0 || self.samples_beta == 0 || self.samples_tau == 0 {
            return bad("sample counts must be at least 1".into());
        }
        if self.family == FamilyKind::ClassicJoint && self.tau_mode != TauMode::Point {
            return bad("classic_joint learns τ inside its own Gaussian; use tau_mode = \"point\"".into());
        }
        if self.tau_mode == TauMode::Hyper && self.stage1() > self.epochs {
            return bad(format!("stage1_epochs = {} exceeds epochs = {}", self.stage1(), self.epochs));
        }
        if self.tau_mode == TauMode::Fixed {
            match &self.fixed_tau {
                Some(t) if t.len() == model.n_tau() && t.iter().all(|v| v.is_finite()) => {}
                Some(t) => {
                    return bad(format!(
                        "fixed_tau has {} entries, model has {} smoothing parameters",
                        t.len(),
                        model.n_tau()
                    ))
                }
                None if model.n_tau() == 0 => {}
                None => return bad("tau_mode = \"fixed\" needs fixed_tau".into()),
            }
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        Ok(())
    }

    /// Variant label, e.g. `svi_local_point`.
    pub fn variant_name(&self) -> String {
        match self.family {
            FamilyKind::ClassicJoint => "svi_classic_joint".into(),
            f => {
                let mode = match self.tau_mode {
                    TauMode::Fixed => "fixed",
                    TauMode::Point => "point",
                    TauMode::Hyper => "hyper",
                };
                format!("svi_{}_{}", f.name(), mode)
            }
        }
    }
}

/// Fitted smoothing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauEstimate {
    Fixed {
        values: Vec<f64>,
    },
    Point {
        values: Vec<f64>,
    },
    /// Normal on the `τ` scale; for the joint family this is the marginal.
    Variational {
        m: Vec<f64>,
        log_s: Vec<f64>,
    },
}

impl TauEstimate {
    /// Central value of each `τ`.
    pub fn location(&self) -> &[f64] {
        match self {
            Self::Fixed { values } | Self::Point { values } => values,
            Self::Variational { m, .. } => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub posterior: GaussianPosterior,
    pub tau: TauEstimate,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Approximate posterior of the coefficients.
    pub posterior: GaussianPosterior,
    /// Joint Gaussian over `(β, τ)` for the joint classic family.
    pub joint: Option<GaussianPosterior>,
    pub tau: TauEstimate,
    pub elbo_trace: Vec<f64>,
    pub elbo_se: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
    /// Epoch count at which hyper mode switched to the variational stage.
    pub stage1_epochs: Option<usize>,
    pub state: VariationalState,
    pub checkpoints: Vec<Checkpoint>,
}

fn tau_estimate(tau: &TauParams, joint: Option<&GaussianPosterior>, q: usize) -> TauEstimate {
    match tau {
        TauParams::Fixed(t) => TauEstimate::Fixed { values: t.clone() },
        TauParams::Point(t) => TauEstimate::Point { values: t.clone() },
        TauParams::Hyper(tv) => TauEstimate::Variational { m: tv.m.clone(), log_s: tv.log_s.clone() },
        TauParams::Joint => {
            let post = joint.expect("joint family has a joint posterior");
            let sd = post.marginal_sd();
            TauEstimate::Variational { m: post.mean[q..].to_vec(), log_s: sd[q..].iter().map(|s| s.ln()).collect() }
        }
    }
}

struct Snapshot {
    posterior: GaussianPosterior,
    joint: Option<GaussianPosterior>,
    tau: TauEstimate,
}

fn snapshot(state: &VariationalState, tau: &TauParams, model: &Model) -> Result<Snapshot, InferenceError> {
    let q = model.q();
    let loc: Vec<f64> = match tau {
        TauParams::Fixed(t) | TauParams::Point(t) => t.clone(),
        TauParams::Hyper(tv) => tv.m.clone(),
        TauParams::Joint => Vec::new(),
    };
    let full = state.build(&loc, model)?;
    let (posterior, joint) =
        if matches!(tau, TauParams::Joint) { (full.leading_marginal(q)?, Some(full)) } else { (full, None) };
    let tau = tau_estimate(tau, joint.as_ref(), q);
    Ok(Snapshot { posterior, joint, tau })
}

/// Runs stochastic variational inference.
///
/// Point mode ascends the ELBO jointly in the variational parameters and
/// `τ`. Hyper mode first does the same for `stage1` epochs, then fixes the
/// `τ` locations at the point estimate and learns their scales together with
/// the remaining variational parameters.
pub fn fit(model: &Model, config: &FitConfig) -> Result<FitResult, InferenceError> {
    config.validate(model)?;
    let n_tau = model.n_tau();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = VariationalState::initialize(config.family, model);
    let mut tau = match (config.family, config.tau_mode) {
        (FamilyKind::ClassicJoint, _) => {
            if let VariationalState::ClassicJoint(s) = &mut state {
                s.values[model.q()..s.dim].iter_mut().for_each(|t| *t = config.initial_tau);
            }
            TauParams::Joint
        }
        (_, TauMode::Fixed) => TauParams::Fixed(config.fixed_tau.clone().unwrap_or_default()),
        _ => TauParams::Point(vec![config.initial_tau; n_tau]),
    };
    let stage1 = config.stage1();
    let mut opt_state = OptimizerState::new(state.n_params(), config.adam);
    let mut opt_tau = OptimizerState::new(tau.n_free(), config.adam);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut trace_se = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::new();
    let mut failures = 0;
    if config.checkpoints.contains(&0) {
        let s = snapshot(&state, &tau, model)?;
        checkpoints.push(Checkpoint { epoch: 0, posterior: s.posterior, tau: s.tau });
    }
    for epoch in 0..config.epochs {
        if config.tau_mode == TauMode::Hyper && epoch == stage1 {
            let TauParams::Point(t) = &tau else { unreachable!("hyper stage 1 runs in point mode") };
            tau = TauParams::Hyper(TauVariational { m: t.clone(), log_s: vec![config.initial_log_s; n_tau] });
            opt_tau = OptimizerState::new(n_tau, config.adam);
        }
        let noise = Noise::for_objective(
            &mut rng,
            &state,
            &tau,
            model,
            config.samples,
            config.samples_beta,
            config.samples_tau,
        );
        match elbo_gradient_with_noise(&state, &tau, model, &noise, config.estimator) {
            Ok(g) => {
                failures = 0;
                trace.push(g.value.mean);
                trace_se.push(g.value.se);
                opt_state.step(state.params_mut(), &g.state);
                match &mut tau {
                    TauParams::Point(t) => opt_tau.step(t, &g.tau),
                    TauParams::Hyper(tv) => {
                        // Locations stay at the stage-1 estimate; only scales move.
                        let k = tv.dim();
                        opt_tau.step(&mut tv.log_s, &g.tau[k..]);
                    }
                    TauParams::Fixed(_) | TauParams::Joint => {}
                }
            }
            Err(
                InferenceError::NonFiniteObjective
                | InferenceError::NonFiniteGradient
                | InferenceError::Variational(_)
                | InferenceError::Linalg(_),
            ) => {
                failures += 1;
                trace.push(f64::NAN);
                trace_se.push(f64::NAN);
                if failures >= 3 {
                    return Err(InferenceError::Diverged { epoch: epoch + 1, failures, trace });
                }
            }
            Err(e) => return Err(e),
        }
        if config.checkpoints.contains(&(epoch + 1)) {
            let s = snapshot(&state, &tau, model)?;
            checkpoints.push(Checkpoint { epoch: epoch + 1, posterior: s.posterior, tau: s.tau });
        }
    }
    let final_snapshot = snapshot(&state, &tau, model)?;
    Ok(FitResult {
        posterior: final_snapshot.posterior,
        joint: final_snapshot.joint,
        tau: final_snapshot.tau,
        elbo_trace: trace,
        elbo_se: trace_se,
        epochs: config.epochs,
        seed: config.seed,
        stage1_epochs: (config.tau_mode == TauMode::Hyper).then_some(stage1),
        state,
        checkpoints,
    })
}
