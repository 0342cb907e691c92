//! Reference posteriors: exact conjugate Gaussian, grid quadrature for up to
//! three dimensions, and adaptive random-walk Metropolis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{EvaluationError, SampleSet};
use crate::linalg::{cholesky, cholesky_solve, LinalgError, LowerTriangular, Matrix};
use crate::model::{Model, ResponseFamily};
use crate::variational::{GaussianPosterior, VariationalError};

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("grid quadrature supports at most 3 dimensions, got {0}")]
    DimensionTooHigh(usize),
    #[error("chain is stuck: acceptance rate {0:.4} after warmup")]
    StuckChain(f64),
    #[error("log target is not finite at the initial point")]
    NonFiniteInit,
    #[error("log target is not finite anywhere on the grid")]
    EmptyGrid,
    #[error("conjugate posterior needs the gaussian_known_sd family, got {0}")]
    NotConjugate(&'static str),
    #[error("invalid reference settings: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Variational(#[from] VariationalError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Analytic,
    Grid,
    Mcmc,
}

#[derive(Debug, Clone)]
pub struct ReferencePosterior {
    pub kind: ReferenceKind,
    pub draws: SampleSet,
    /// Exact (analytic) or quadrature (grid) moments.
    pub mean: Option<Vec<f64>>,
    pub covariance: Option<Matrix>,
    /// `ln ∫ exp(log_target)` for grid references.
    pub log_normalizer: Option<f64>,
    /// Post-warmup acceptance rate for MCMC references.
    pub acceptance_rate: Option<f64>,
}

/// Exact posterior of a Gaussian linear model with known noise and prior
/// precision `k_lambda`: precision `XᵀX/σ² + K_λ`, mean `Λ⁻¹Xᵀy/σ²`.
pub fn conjugate_gaussian(
    x: &Matrix,
    y: &[f64],
    noise_sd: f64,
    k_lambda: &Matrix,
) -> Result<GaussianPosterior, ReferenceError> {
    let s2 = noise_sd * noise_sd;
    let mut lambda = x.transpose().matmul(x);
    lambda.scale(1.0 / s2);
    lambda.add_assign_scaled(k_lambda, 1.0);
    let lambda = lambda.symmetrized();
    let chol = cholesky(&lambda)?;
    let mut rhs = x.t_matvec(y);
    rhs.iter_mut().for_each(|v| *v /= s2);
    let mean = cholesky_solve(&chol, &rhs)?;
    Ok(GaussianPosterior::new(mean, chol)?)
}

/// Conjugate reference for a model with `gaussian_known_sd` response at
/// fixed `τ`, with `n_draws` exact draws.
pub fn conjugate_gaussian_posterior(
    model: &Model,
    tau: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<ReferencePosterior, ReferenceError> {
    let ResponseFamily::GaussianKnownSd { sd } = *model.family() else {
        return Err(ReferenceError::NotConjugate(model.family().name()));
    };
    let post = conjugate_gaussian(&model.design.params[0].x, &model.y, sd, &model.prior_precision(tau))?;
    let draws = SampleSet::from_gaussian(&post, n_draws, model.design.coefficient_labels(), seed)?;
    Ok(ReferencePosterior {
        kind: ReferenceKind::Analytic,
        covariance: Some(post.covariance()),
        mean: Some(post.mean),
        draws,
        log_normalizer: None,
        acceptance_rate: None,
    })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Tensor-grid quadrature of an unnormalized log density over a box.
///
/// `resolution` points per axis including both ends. Moments are the exact
/// grid moments; draws pick a grid cell by its mass and add a uniform jitter
/// within the cell.
pub fn grid_posterior<F: Fn(&[f64]) -> f64>(
    log_target: F,
    bounds: &[(f64, f64)],
    resolution: usize,
    n_draws: usize,
    labels: Vec<String>,
    seed: u64,
) -> Result<ReferencePosterior, ReferenceError> {
    let d = bounds.len();
    if d == 0 || d > 3 {
        return Err(ReferenceError::DimensionTooHigh(d));
    }
    if resolution < 2 || bounds.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(ReferenceError::InvalidConfig("grid needs resolution ≥ 2 and non-empty intervals".into()));
    }
    let h: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / (resolution - 1) as f64).collect();
    let total = resolution.pow(d as u32);
    let point = |k: usize, out: &mut [f64]| {
        let mut r = k;
        for a in (0..d).rev() {
            out[a] = bounds[a].0 + (r % resolution) as f64 * h[a];
            r /= resolution;
        }
    };
    let mut x = vec![0.0; d];
    let mut logw = Vec::with_capacity(total);
    for k in 0..total {
        point(k, &mut x);
        let v = log_target(&x);
        logw.push(if v.is_nan() { f64::NEG_INFINITY } else { v });
    }
    let lse = log_sum_exp(&logw);
    if !lse.is_finite() {
        return Err(ReferenceError::EmptyGrid);
    }
    let cell_volume: f64 = h.iter().product();
    let w: Vec<f64> = logw.iter().map(|v| (v - lse).exp()).collect();
    let mut mean = vec![0.0; d];
    for (k, &wk) in w.iter().enumerate() {
        point(k, &mut x);
        for a in 0..d {
            mean[a] += wk * x[a];
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for (k, &wk) in w.iter().enumerate() {
        point(k, &mut x);
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += wk * (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    let mut cdf = Vec::with_capacity(total);
    let mut acc = 0.0;
    for &wk in &w {
        acc += wk;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n_draws * d);
    for _ in 0..n_draws {
        let u: f64 = rng.random::<f64>() * acc;
        let k = cdf.partition_point(|&c| c < u).min(total - 1);
        point(k, &mut x);
        for a in 0..d {
            let jitter = (rng.random::<f64>() - 0.5) * h[a];
            data.push((x[a] + jitter).clamp(bounds[a].0, bounds[a].1));
        }
    }
    let draws = SampleSet::new(Matrix::from_vec(n_draws, d, data), labels)?;
    Ok(ReferencePosterior {
        kind: ReferenceKind::Grid,
        draws,
        mean: Some(mean),
        covariance: Some(cov),
        log_normalizer: Some(lse + cell_volume.ln()),
        acceptance_rate: None,
    })
}

fn default_thin() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RwmhConfig {
    pub n_draws: usize,
    pub n_warmup: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
}

impl Default for RwmhConfig {
    fn default() -> Self {
        Self { n_draws: 20_000, n_warmup: 10_000, thin: 1 }
    }
}

/// Adaptive random-walk Metropolis with a joint Gaussian proposal.
///
/// During warmup the proposal covariance tracks the running chain covariance
/// and a global log-scale follows a Robbins–Monro recursion toward 0.234
/// acceptance (0.44 in one dimension). After warmup the proposal is frozen.
/// `initial_cov`, when given, seeds the proposal shape.
pub fn rwmh_sample<F: Fn(&[f64]) -> f64, R: Rng + ?Sized>(
    log_target: F,
    init: &[f64],
    initial_cov: Option<&Matrix>,
    config: &RwmhConfig,
    labels: Vec<String>,
    rng: &mut R,
) -> Result<ReferencePosterior, ReferenceError> {
    let d = init.len();
    if d == 0 || config.n_draws < 2 || config.thin == 0 {
        return Err(ReferenceError::InvalidConfig("need dimension ≥ 1, n_draws ≥ 2 and thin ≥ 1".into()));
    }
    let mut current = init.to_vec();
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(ReferenceError::NonFiniteInit);
    }
    let target_rate = if d == 1 { 0.44 } else { 0.234 };
    let base_scale = 2.38 / (d as f64).sqrt();
    let shape = match initial_cov {
        Some(c) => c.symmetrized(),
        None => {
            let mut m = Matrix::identity(d);
            m.scale(0.01);
            m
        }
    };
    let jitter = |m: &Matrix| -> Matrix {
        let mut out = m.clone();
        let avg = (0..d).map(|i| m[(i, i)].abs()).sum::<f64>() / d as f64;
        for i in 0..d {
            out[(i, i)] += 1e-10 * avg.max(1e-300);
        }
        out
    };
    let mut chol: LowerTriangular = cholesky(&jitter(&shape))?;
    let mut log_scale = 0.0_f64;
    // Running moments of the warmup chain.
    let mut run_mean = current.clone();
    let mut run_m2 = Matrix::zeros(d, d);
    let mut n_seen = 1.0;
    let total = config.n_warmup + config.n_draws * config.thin;
    let mut data = Vec::with_capacity(config.n_draws * d);
    let mut accepted_after = 0usize;
    let mut proposal = vec![0.0; d];
    for iter in 0..total {
        let warm = iter < config.n_warmup;
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let step = chol.matvec(&z);
        let s = base_scale * log_scale.exp();
        for k in 0..d {
            proposal[k] = current[k] + s * step[k];
        }
        let lp = log_target(&proposal);
        let log_alpha = if lp.is_finite() { (lp - current_lp).min(0.0) } else { f64::NEG_INFINITY };
        let accept = rng.random::<f64>().ln() < log_alpha;
        if accept {
            current.copy_from_slice(&proposal);
            current_lp = lp;
        }
        if warm {
            let t = (iter + 1) as f64;
            log_scale += t.powf(-0.6) * (log_alpha.exp() - target_rate);
            n_seen += 1.0;
            let delta: Vec<f64> = current.iter().zip(&run_mean).map(|(c, m)| c - m).collect();
            for k in 0..d {
                run_mean[k] += delta[k] / n_seen;
            }
            for a in 0..d {
                for b in 0..d {
                    run_m2[(a, b)] += delta[a] * (current[b] - run_mean[b]);
                }
            }
            let refresh = iter >= 2 * d.max(50) && iter % 25 == 0;
            if refresh {
                let mut emp = run_m2.clone();
                emp.scale(1.0 / (n_seen - 1.0));
                if let Ok(c) = cholesky(&jitter(&emp.symmetrized())) {
                    chol = c;
                }
            }
        } else {
            if accept {
                accepted_after += 1;
            }
            let k = iter - config.n_warmup;
            if (k + 1).is_multiple_of(config.thin) {
                data.extend_from_slice(&current);
            }
        }
    }
    let rate = accepted_after as f64 / (config.n_draws * config.thin) as f64;
    if rate < 0.01 {
        return Err(ReferenceError::StuckChain(rate));
    }
    let draws = SampleSet::new(Matrix::from_vec(config.n_draws, d, data), labels)?;
    Ok(ReferencePosterior {
        kind: ReferenceKind::Mcmc,
        draws,
        mean: None,
        covariance: None,
        log_normalizer: None,
        acceptance_rate: Some(rate),
    })
}

/// RWMH on the coefficient posterior of a model at fixed `τ`.
pub fn rwmh_coefficients<R: Rng + ?Sized>(
    model: &Model,
    tau: &[f64],
    init: &GaussianPosterior,
    config: &RwmhConfig,
    rng: &mut R,
) -> Result<ReferencePosterior, ReferenceError> {
    let cov = init.covariance();
    rwmh_sample(
        |b: &[f64]| model.log_joint(b, tau),
        &init.mean,
        Some(&cov),
        config,
        model.design.coefficient_labels(),
        rng,
    )
}
