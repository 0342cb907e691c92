//! Acceptance criteria. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. `SVIDR_CRITERIA=3,5` restricts the run to a subset.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use svidr::basis::{bspline_design, center_term, rw_penalty, TermSpec};
use svidr::cli::replicate::{run_replications, ReplicateConfig};
use svidr::data::Dataset;
use svidr::evaluation::{
    block_grid, effect_curve, wasserstein1_marginals, wasserstein1_sorted, PosteriorSource, SampleSet,
};
use svidr::inference::{fit, FitConfig, GradientEstimator, TauEstimate, TauMode};
use svidr::linalg::{cholesky, cholesky_solve, log_chol_compress, log_chol_expand, psd_rank, LogCholVector, Matrix};
use svidr::model::{Model, ModelSpec, ResponseFamily};
use svidr::reference::{conjugate_gaussian_posterior, grid_posterior, rwmh_sample, RwmhConfig};
use svidr::simgen::{centered_on, gen_gamma, GammaScenario, LogisticScenario, Scenario};
use svidr::variational::{FamilyKind, GaussianPosterior};

use common::{gradient_discrepancy, tiny_gaussian_model, tiny_logistic_model, Mode, ALL_FAMILIES};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, outcome: &Outcome, elapsed: Duration) {
    let status = if outcome.pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id}: {status} [{:.1}s] {}\n", elapsed.as_secs_f64(), outcome.detail);
    // Written past the test harness capture so the lines always show.
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn rel_norm(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn conjugate_setup() -> (Model, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100;
    let sd = 0.3;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin() + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let data = Dataset::new().with_column("y", y).unwrap().with_column("x", x).unwrap();
    let spec = ModelSpec::new(ResponseFamily::GaussianKnownSd { sd }, "y", vec![vec![TermSpec::pspline("x")]]);
    (Model::new(&spec, &data).unwrap(), vec![0.0])
}

fn criterion_1() -> Outcome {
    let (model, tau) = conjugate_setup();
    let exact = conjugate_gaussian_posterior(&model, &tau, 2, 0).unwrap();
    let mean = exact.mean.unwrap();
    let xm = &model.design.params[0].x;
    let mut lambda = xm.transpose().matmul(xm);
    lambda.scale(1.0 / 0.09);
    lambda.add_assign_scaled(&model.prior_precision(&tau), 1.0);
    let mut cfg = FitConfig::new(FamilyKind::LocalFull, TauMode::Fixed, 2000, 3);
    cfg.samples = 32;
    cfg.fixed_tau = Some(tau);
    cfg.estimator = GradientEstimator::StickingTheLanding;
    let start = Instant::now();
    let r = fit(&model, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mean_rel = rel_norm(&r.posterior.mean, &mean);
    let prec_rel = r.posterior.precision().sub(&lambda).frobenius_norm() / lambda.frobenius_norm();
    Outcome {
        pass: mean_rel <= 1e-3 && prec_rel <= 1e-2 && secs <= 30.0,
        detail: format!(
            "mean rel err {mean_rel:.2e} (tol 1e-3), precision rel Frobenius err {prec_rel:.2e} (tol 1e-2), fit {secs:.2}s (limit 30s), Q = {}",
            model.q()
        ),
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_case = String::new();
    let mut checked = 0;
    for seed in 1..=3 {
        for (name, model) in [("gaussian", tiny_gaussian_model(seed)), ("logistic", tiny_logistic_model(seed + 10))] {
            for family in ALL_FAMILIES {
                for mode in [Mode::Fixed, Mode::Point, Mode::Hyper] {
                    let d = gradient_discrepancy(&model, family, mode, 7 + seed);
                    checked += 1;
                    if !(d <= worst) {
                        worst = d;
                        worst_case = format!("{name} {} {mode:?}", family.name());
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1e-4 && secs <= 60.0,
        detail: format!("{checked} family x mode x model checks, worst rel discrepancy {worst:.2e} ({worst_case}) (tol 1e-4), limit 60s"),
    }
}

fn logistic_replications() -> (svidr::cli::replicate::ReplicationTable, f64) {
    let spec = ModelSpec::new(
        ResponseFamily::BernoulliLogit,
        "y",
        vec![vec![TermSpec::pspline("x1"), TermSpec::pspline("x2")]],
    );
    let cfg = ReplicateConfig {
        scenario: Scenario::LogisticSparse(LogisticScenario::new(200, 0)),
        model: spec,
        variants: vec![
            FitConfig::new(FamilyKind::LocalFull, TauMode::Point, 2000, 0),
            FitConfig::new(FamilyKind::LocalBd, TauMode::Point, 2000, 0),
        ],
        replicates: 10,
        seed: 2024,
        checkpoints: vec![100, 500, 1000, 2000],
        draws: 4000,
        reference: RwmhConfig { n_draws: 8000, n_warmup: 20_000, thin: 100 },
    };
    let start = Instant::now();
    let table = run_replications(&cfg);
    (table, start.elapsed().as_secs_f64())
}

fn criterion_3(table: &svidr::cli::replicate::ReplicationTable, secs: f64) -> Outcome {
    let medians: Vec<f64> =
        [100, 500, 1000, 2000].iter().map(|&e| table.median_w1("svi_local_point", e).unwrap_or(f64::NAN)).collect();
    let baseline = table.median_baseline().unwrap_or(f64::NAN);
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let bound = medians[3] <= 2.0 * baseline;
    let failures = table.rows.iter().filter(|r| r.status != "ok").count();
    Outcome {
        pass: decreasing && bound && secs <= 900.0,
        detail: format!(
            "median W1 at 100/500/1000/2000 epochs = {:.4}/{:.4}/{:.4}/{:.4} (strictly decreasing: {decreasing}), \
             median baseline {baseline:.4}, ratio at 2000 {:.2} (limit 2.0), failed rows {failures}, replications {secs:.0}s (limit 900s)",
            medians[0],
            medians[1],
            medians[2],
            medians[3],
            medians[3] / baseline
        ),
    }
}

fn criterion_5(table: &svidr::cli::replicate::ReplicationTable, secs: f64) -> Outcome {
    let local = table.median_w1("svi_local_point", 2000).unwrap_or(f64::NAN);
    let bd = table.median_w1("svi_local_bd_point", 2000).unwrap_or(f64::NAN);
    Outcome {
        pass: bd <= 1.5 * local && secs <= 900.0,
        detail: format!(
            "median W1 at 2000 epochs: svi_local_bd {bd:.4}, svi_local {local:.4}, ratio {:.2} (limit 1.5), replications {secs:.0}s (limit 900s)",
            bd / local
        ),
    }
}

fn gamma_model(seed: u64) -> (GammaScenario, Model, Vec<f64>) {
    let g = GammaScenario::new(200, seed);
    let sim = gen_gamma(&g).unwrap();
    let spec = ModelSpec::new(
        ResponseFamily::GammaMeanVar,
        "y",
        vec![vec![TermSpec::pspline("x")], vec![TermSpec::pspline("x")]],
    );
    let model = Model::new(&spec, &sim.data).unwrap();
    let x = sim.data.column("x").unwrap().to_vec();
    (g, model, x)
}

/// Integrated autocorrelation time with Geyer's initial positive sequence.
fn autocorrelation_time(trace: &[f64]) -> f64 {
    let n = trace.len();
    let m = trace.iter().sum::<f64>() / n as f64;
    let c0 = trace.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    let rho = |k: usize| (0..n - k).map(|i| (trace[i] - m) * (trace[i + k] - m)).sum::<f64>() / (n as f64 * c0);
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n / 2 {
        let pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    tau.max(1.0)
}

/// Mean and standard error of `trace`, the error inflated by the
/// autocorrelation time `iat`.
fn mean_se(trace: &[f64], iat: f64) -> (f64, f64) {
    let n = trace.len() as f64;
    let m = trace.iter().sum::<f64>() / n;
    let var = trace.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var * iat / n).sqrt())
}

fn criterion_4() -> Outcome {
    let (g, model, x) = gamma_model(1);
    let start = Instant::now();
    let r = fit(&model, &FitConfig::new(FamilyKind::LocalFull, TauMode::Point, 4000, 1)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut rmse = Vec::new();
    let truths: [(&str, Box<dyn Fn(f64) -> f64>); 2] =
        [("mu:s(x)", Box::new(|v| g.mean(v).ln())), ("sigma2:s(x)", Box::new(|v| g.variance(v).ln()))];
    for (label, f) in &truths {
        let block = model.design.block_by_label(label).unwrap();
        let grid = block_grid(block, 50).unwrap();
        let curve = effect_curve(PosteriorSource::Gaussian(&r.posterior), block, &grid, 0.95).unwrap();
        let truth = centered_on(f, &grid, &x);
        let e = (curve.mean.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / grid.len() as f64).sqrt();
        rmse.push(e);
    }
    let half = &r.elbo_trace[r.elbo_trace.len() / 2..];
    let iat = autocorrelation_time(half);
    let w: Vec<(f64, f64)> = half.chunks(100).filter(|c| c.len() > 1).map(|c| mean_se(c, iat)).collect();
    let mut worst_drop: f64 = f64::NEG_INFINITY;
    let monotone = w.windows(2).all(|p| {
        let slack = 3.0 * (p[0].1.powi(2) + p[1].1.powi(2)).sqrt();
        worst_drop = worst_drop.max((p[0].0 - p[1].0) / slack);
        p[1].0 >= p[0].0 - slack
    });
    Outcome {
        pass: rmse.iter().all(|&e| e <= 0.25) && monotone && secs <= 600.0,
        detail: format!(
            "effect RMSE log-mean {:.4}, log-variance {:.4} (tol 0.25); final-half ELBO window means nondecreasing within 3 SE: {monotone} \
             (largest drop {worst_drop:.2} of allowance, autocorrelation time {iat:.1}); fit {secs:.1}s (limit 600s)",
            rmse[0], rmse[1]
        ),
    }
}

fn criterion_6() -> Outcome {
    let (_, model, _) = gamma_model(2);
    let mut cfg = FitConfig::new(FamilyKind::LocalFull, TauMode::Hyper, 4000, 5);
    let stage1 = cfg.stage1();
    cfg.checkpoints = vec![stage1];
    let r = fit(&model, &cfg).unwrap();
    let TauEstimate::Point { values: point } = &r.checkpoints[0].tau else {
        return Outcome { pass: false, detail: "stage-1 checkpoint does not hold a point estimate".into() };
    };
    let TauEstimate::Variational { m, log_s } = &r.tau else {
        return Outcome { pass: false, detail: "hyper fit did not return a variational tau".into() };
    };
    let finite = log_s.iter().all(|v| v.is_finite() && v.exp().is_finite() && v.exp() > 0.0);
    let frozen = m.iter().zip(point).all(|(a, b)| a.to_bits() == b.to_bits());
    let stage1_tail = &r.elbo_trace[stage1 - 100..stage1];
    let stage2_tail = &r.elbo_trace[r.elbo_trace.len() - 100..];
    let (e1, s1) = mean_se(stage1_tail, autocorrelation_time(stage1_tail));
    let (e2, s2) = mean_se(stage2_tail, autocorrelation_time(stage2_tail));
    let se = (s1 * s1 + s2 * s2).sqrt();
    let elbo_ok = e2 >= e1 - 3.0 * se;
    let scales: Vec<String> = log_s.iter().map(|v| format!("{:.3}", v.exp())).collect();
    Outcome {
        pass: finite && frozen && elbo_ok,
        detail: format!(
            "learned tau scales [{}] finite: {finite}; locations bit-identical to stage-1 estimate: {frozen}; \
             stage-2 ELBO {e2:.3} vs stage-1 {e1:.3} (allowance 3 SE = {:.3})",
            scales.join(", "),
            3.0 * se
        ),
    }
}

/// Marginal W1 of `a` against `b` compared with twice the combined Monte
/// Carlo error, estimated from independent repeat draws `a2`, `b2`.
fn agree(a: &SampleSet, a2: &SampleSet, b: &SampleSet, b2: &SampleSet) -> (bool, f64) {
    let cross = wasserstein1_marginals(a, b, 0).unwrap();
    let self_a = wasserstein1_marginals(a, a2, 0).unwrap();
    let self_b = wasserstein1_marginals(b, b2, 0).unwrap();
    let mut worst: f64 = 0.0;
    let ok = (0..cross.per_coordinate.len()).all(|j| {
        let mc = ((self_a.per_coordinate[j].powi(2) + self_b.per_coordinate[j].powi(2)) / 2.0).sqrt();
        worst = worst.max(cross.per_coordinate[j] / (2.0 * mc));
        cross.per_coordinate[j] <= 2.0 * mc
    });
    (ok, worst)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let m = 4000;
    let mut lines = Vec::new();
    let mut all = true;

    // Conjugate Gaussian model with intercept and slope: all three oracles apply.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 30;
    let sd = 0.5;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| 0.4 + 1.3 * v + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let data = Dataset::new().with_column("y", y).unwrap().with_column("x", x).unwrap();
    let spec = ModelSpec::new(ResponseFamily::GaussianKnownSd { sd }, "y", vec![vec![TermSpec::linear("x")]]);
    let model = Model::new(&spec, &data).unwrap();
    let labels = model.design.coefficient_labels();
    let conj = |seed| conjugate_gaussian_posterior(&model, &[], m, seed).unwrap();
    let (c1, c2) = (conj(1), conj(2));
    let mean = c1.mean.clone().unwrap();
    let cov = c1.covariance.clone().unwrap();
    let bounds: Vec<(f64, f64)> =
        (0..2).map(|j| (mean[j] - 8.0 * cov[(j, j)].sqrt(), mean[j] + 8.0 * cov[(j, j)].sqrt())).collect();
    let grid = |seed| grid_posterior(|b| model.log_joint(b, &[]), &bounds, 301, m, labels.clone(), seed).unwrap();
    let (g1, g2) = (grid(3), grid(4));
    let rwmh_cfg = RwmhConfig { n_draws: m, n_warmup: 5000, thin: 10 };
    let chain = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rwmh_sample(|b| model.log_joint(b, &[]), &[0.0, 0.0], None, &rwmh_cfg, labels.clone(), &mut rng).unwrap()
    };
    let (r1, r2) = (chain(5), chain(6));
    for (name, a, a2, b, b2) in [
        ("grid~conjugate", &g1.draws, &g2.draws, &c1.draws, &c2.draws),
        ("rwmh~conjugate", &r1.draws, &r2.draws, &c1.draws, &c2.draws),
        ("rwmh~grid", &r1.draws, &r2.draws, &g1.draws, &g2.draws),
    ] {
        let (ok, worst) = agree(a, a2, b, b2);
        all &= ok;
        lines.push(format!("{name} {:.2}", worst));
    }

    // Non-conjugate logistic posterior: grid against RWMH.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let xs: Vec<f64> = (0..60).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ys: Vec<f64> =
        xs.iter().map(|&v| f64::from(u8::from(rng.random_bool(1.0 / (1.0 + (-(0.3 + 1.2 * v)).exp()))))).collect();
    let data = Dataset::new().with_column("y", ys).unwrap().with_column("x", xs).unwrap();
    let spec = ModelSpec::new(ResponseFamily::BernoulliLogit, "y", vec![vec![TermSpec::linear("x")]]);
    let model = Model::new(&spec, &data).unwrap();
    let labels = model.design.coefficient_labels();
    let bounds = [(-3.0, 3.0), (-2.0, 5.0)];
    let grid = |seed| grid_posterior(|b| model.log_joint(b, &[]), &bounds, 301, m, labels.clone(), seed).unwrap();
    let chain = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rwmh_sample(|b| model.log_joint(b, &[]), &[0.0, 0.0], None, &rwmh_cfg, labels.clone(), &mut rng).unwrap()
    };
    let (ok, worst) = agree(&grid(7).draws, &grid(8).draws, &chain(9).draws, &chain(10).draws);
    all &= ok;
    lines.push(format!("logistic rwmh~grid {:.2}", worst));
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: all && secs <= 300.0,
        detail: format!(
            "worst marginal W1 / (2 x combined MC error) per pair: {} (limit 1.00), {secs:.1}s (limit 300s)",
            lines.join(", ")
        ),
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    for (q, order) in [(8, 1), (8, 2), (12, 3)] {
        check("penalty rank", psd_rank(&rw_penalty(q, order).unwrap(), 1e-10) == q - order);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..3.0)).collect();
    let b = bspline_design(&x, 10, 3).unwrap();
    check("partition of unity", (0..b.rows()).all(|i| (b.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12));

    let block = center_term(&b, &rw_penalty(b.cols(), 2).unwrap()).unwrap();
    let worst_sum = (0..block.x.cols()).map(|j| block.x.column(j).iter().sum::<f64>().abs()).fold(0.0, f64::max);
    check("centering", worst_sum <= 1e-10);

    let dim = 5;
    let values: Vec<f64> = (0..dim * (dim + 1) / 2).map(|_| rng.random_range(-1.5..1.5)).collect();
    let v = LogCholVector::new(dim, values.clone()).unwrap();
    let back = log_chol_compress(&log_chol_expand(&v)).unwrap();
    check(
        "log-Cholesky round trip",
        back.values().iter().zip(&values).all(|(a, b)| (a - b).abs() <= f64::EPSILON * b.abs().max(1.0)),
    );

    let a = Matrix::from_rows(&[vec![2.0, 0.6, 0.1], vec![0.6, 1.5, -0.3], vec![0.1, -0.3, 1.0]]);
    let post = GaussianPosterior::from_precision(vec![0.5, -1.0, 2.0], &a).unwrap();
    let draws = SampleSet::from_gaussian(&post, 200_000, vec!["a".into(), "b".into(), "c".into()], 9).unwrap();
    let cov = post.covariance();
    let d = draws.draws();
    let n = d.rows() as f64;
    let means: Vec<f64> = (0..3).map(|j| d.column(j).iter().sum::<f64>() / n).collect();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let c = (0..d.rows()).map(|k| (d.row(k)[i] - means[i]) * (d.row(k)[j] - means[j])).sum::<f64>() / (n - 1.0);
            worst = worst.max((c - cov[(i, j)]).abs() / (cov[(i, i)] * cov[(j, j)]).sqrt());
        }
    }
    check("sampling covariance", worst <= 0.01);
    let l = cholesky(&a).unwrap();
    let solved = cholesky_solve(&l, &a.matvec(&[1.0, 2.0, 3.0])).unwrap();
    check("cholesky solve", solved.iter().zip([1.0, 2.0, 3.0]).all(|(s, t)| (s - t).abs() <= 1e-12));

    let u: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
    let w: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..2.0)).collect();
    let z: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1.0)).collect();
    let shifted: Vec<f64> = u.iter().map(|v| v + 0.7).collect();
    check("W1 identity", wasserstein1_sorted(&u, &u) == 0.0);
    check("W1 symmetry", wasserstein1_sorted(&u, &w) == wasserstein1_sorted(&w, &u));
    check("W1 shift", (wasserstein1_sorted(&u, &shifted) - 0.7).abs() <= 1e-12);
    check(
        "W1 triangle inequality",
        wasserstein1_sorted(&u, &z) <= wasserstein1_sorted(&u, &w) + wasserstein1_sorted(&w, &z) + 1e-12,
    );
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: failures.is_empty() && secs <= 120.0,
        detail: if failures.is_empty() {
            format!("penalty ranks, partition of unity, centering, log-Cholesky, sampling covariance, W1 properties all hold ({secs:.1}s, limit 120s)")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    }
}

#[test]
fn acceptance_criteria() {
    let selected: Vec<usize> = std::env::var("SVIDR_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect())
        .unwrap_or_else(|| (1..=8).collect());
    let mut failed = Vec::new();
    let mut run = |id: usize, f: &mut dyn FnMut() -> Outcome| {
        if !selected.contains(&id) {
            return;
        }
        let start = Instant::now();
        let o = f();
        report(id, &o, start.elapsed());
        if !o.pass {
            failed.push(id);
        }
    };
    run(1, &mut criterion_1);
    run(2, &mut criterion_2);
    if selected.contains(&3) || selected.contains(&5) {
        let (table, secs) = logistic_replications();
        run(3, &mut || criterion_3(&table, secs));
        run(4, &mut criterion_4);
        run(5, &mut || criterion_5(&table, secs));
    } else {
        run(4, &mut criterion_4);
    }
    run(6, &mut criterion_6);
    run(7, &mut criterion_7);
    run(8, &mut criterion_8);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
