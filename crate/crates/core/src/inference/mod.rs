//! Stochastic variational training: ELBO estimation, gradients, Adam and
//! the point / hyper-variational fitting procedures.

mod adam;
mod elbo;
mod fit;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use elbo::{
    elbo_estimate, elbo_gradient, elbo_gradient_with_noise, elbo_with_noise, set_tau_free_values, tau_free_values,
    ElboGradient, ElboValue, GradientEstimator, Noise, TauParams,
};
pub use fit::{fit, Checkpoint, FitConfig, FitResult, TauEstimate, TauMode};

use crate::variational::VariationalError;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("ELBO estimate is not finite")]
    NonFiniteObjective,
    #[error("ELBO gradient is not finite")]
    NonFiniteGradient,
    #[error("optimization diverged: {failures} consecutive non-finite epochs ending at epoch {epoch}")]
    Diverged { epoch: usize, failures: usize, trace: Vec<f64> },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Variational(#[from] VariationalError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}
