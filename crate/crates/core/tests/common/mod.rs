#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svidr::basis::TermSpec;
use svidr::data::Dataset;
use svidr::inference::{
    elbo_gradient_with_noise, elbo_with_noise, set_tau_free_values, tau_free_values, GradientEstimator, Noise,
    TauParams,
};
use svidr::model::{Model, ModelSpec, ResponseFamily};
use svidr::variational::{FamilyKind, TauVariational, VariationalState};

pub const ALL_FAMILIES: [FamilyKind; 5] = [
    FamilyKind::LocalFull,
    FamilyKind::LocalBd,
    FamilyKind::LocalBdCorr,
    FamilyKind::Classic,
    FamilyKind::ClassicJoint,
];

/// Tiny two-parameter Gaussian model: N = 5, Q = 6 (4 for the mean, 2 for
/// the log sd), one smoothing parameter.
pub fn tiny_gaussian_model(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 5;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin() + rng.random_range(-0.3..0.3)).collect();
    let data = Dataset::new().with_column("y", y).unwrap().with_column("x", x).unwrap().with_column("z", z).unwrap();
    let spec = ModelSpec::new(
        ResponseFamily::Gaussian,
        "y",
        vec![vec![TermSpec::pspline_with("x", 3, 2, 2)], vec![TermSpec::linear("z")]],
    );
    let model = Model::new(&spec, &data).unwrap();
    assert_eq!(model.q(), 6);
    model
}

/// One-parameter logistic model: N = 5, Q = 5.
pub fn tiny_logistic_model(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 5;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let y = vec![1.0, 0.0, 1.0, 1.0, 0.0];
    let data = Dataset::new().with_column("y", y).unwrap().with_column("x", x).unwrap();
    let spec = ModelSpec::new(ResponseFamily::BernoulliLogit, "y", vec![vec![TermSpec::pspline_with("x", 4, 2, 2)]]);
    let model = Model::new(&spec, &data).unwrap();
    assert_eq!(model.q(), 5);
    model
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Fixed,
    Point,
    Hyper,
}

/// Worst relative discrepancy between the analytic gradient and central
/// differences of the ELBO under common random numbers, measured as
/// `|g − fd| / max(|g|, |fd|, 1e-3·‖fd‖∞)`.
pub fn gradient_discrepancy(model: &Model, family: FamilyKind, mode: Mode, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = VariationalState::initialize(family, model);
    for v in state.params_mut() {
        *v += rng.random_range(-0.4..0.4);
    }
    let n_tau = model.n_tau();
    let tau0: Vec<f64> = (0..n_tau).map(|_| rng.random_range(-0.5..1.0)).collect();
    let tau = if family == FamilyKind::ClassicJoint {
        TauParams::Joint
    } else {
        match mode {
            Mode::Fixed => TauParams::Fixed(tau0),
            Mode::Point => TauParams::Point(tau0),
            Mode::Hyper => TauParams::Hyper(TauVariational {
                m: tau0,
                log_s: (0..n_tau).map(|_| rng.random_range(-1.5..-0.5)).collect(),
            }),
        }
    };
    let noise = Noise::for_objective(&mut rng, &state, &tau, model, 4, 3, 2);
    let g = elbo_gradient_with_noise(&state, &tau, model, &noise, GradientEstimator::Total).unwrap();
    let h = 1e-6;
    let mut fd = Vec::new();
    for k in 0..state.n_params() {
        let mut plus = state.clone();
        plus.params_mut()[k] += h;
        let mut minus = state.clone();
        minus.params_mut()[k] -= h;
        let fp = elbo_with_noise(&plus, &tau, model, &noise).unwrap().mean;
        let fm = elbo_with_noise(&minus, &tau, model, &noise).unwrap().mean;
        fd.push((fp - fm) / (2.0 * h));
    }
    let free = tau_free_values(&tau);
    for k in 0..free.len() {
        let mut plus = tau.clone();
        let mut v = free.clone();
        v[k] += h;
        set_tau_free_values(&mut plus, &v);
        let mut minus = tau.clone();
        v[k] -= 2.0 * h;
        set_tau_free_values(&mut minus, &v);
        let fp = elbo_with_noise(&state, &plus, model, &noise).unwrap().mean;
        let fm = elbo_with_noise(&state, &minus, model, &noise).unwrap().mean;
        fd.push((fp - fm) / (2.0 * h));
    }
    let analytic: Vec<f64> = g.state.iter().chain(&g.tau).copied().collect();
    assert_eq!(analytic.len(), fd.len());
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic.iter().zip(&fd).map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-3 * scale)).fold(0.0, f64::max)
}
