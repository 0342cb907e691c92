//! Sample sets, marginal Wasserstein-1 distances, posterior summaries and
//! effect curves.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::basis::{BasisError, DesignBlock, TermKind};
use crate::linalg::{dot, Matrix};
use crate::variational::GaussianPosterior;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("coordinate labels differ: {0}")]
    LabelMismatch(String),
    #[error("sample set needs at least 2 draws, got {0}")]
    TooFewDraws(usize),
    #[error("non-finite draw at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label count {labels} does not match {cols} columns")]
    ShapeMismatch { labels: usize, cols: usize },
    #[error("grid value {value} outside the covariate range [{lo}, {hi}]")]
    GridOutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("credible level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Posterior draws: one row per draw, one labelled column per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    draws: Matrix,
    labels: Vec<String>,
}

impl SampleSet {
    pub fn new(draws: Matrix, labels: Vec<String>) -> Result<Self, EvaluationError> {
        if draws.rows() < 2 {
            return Err(EvaluationError::TooFewDraws(draws.rows()));
        }
        if labels.len() != draws.cols() {
            return Err(EvaluationError::ShapeMismatch { labels: labels.len(), cols: draws.cols() });
        }
        if let Some(k) = draws.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(EvaluationError::NonFinite { row: k / draws.cols(), col: k % draws.cols() });
        }
        Ok(Self { draws, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<String>) -> Result<Self, EvaluationError> {
        let cols = labels.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(EvaluationError::ShapeMismatch { labels: cols, cols: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(Matrix::from_vec(rows.len(), cols, data), labels)
    }

    /// `m` exact draws from a Gaussian.
    pub fn from_gaussian(
        post: &GaussianPosterior,
        m: usize,
        labels: Vec<String>,
        seed: u64,
    ) -> Result<Self, EvaluationError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = post.dim();
        let mut data = Vec::with_capacity(m * d);
        for _ in 0..m {
            let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            data.extend(post.sample(&eps));
        }
        Self::new(Matrix::from_vec(m, d, data), labels)
    }

    pub fn draws(&self) -> &Matrix {
        &self.draws
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_draws(&self) -> usize {
        self.draws.rows()
    }

    pub fn dim(&self) -> usize {
        self.draws.cols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j)
    }

    /// Keeps the given columns.
    pub fn select(&self, cols: &[usize]) -> Self {
        let m = self.n_draws();
        let mut data = Vec::with_capacity(m * cols.len());
        for i in 0..m {
            let row = self.draws.row(i);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Self {
            draws: Matrix::from_vec(m, cols.len(), data),
            labels: cols.iter().map(|&c| self.labels[c].clone()).collect(),
        }
    }

    /// Keeps the given rows.
    pub fn rows_subset(&self, rows: &[usize]) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(self.draws.row(r));
        }
        Self { draws: Matrix::from_vec(rows.len(), d, data), labels: self.labels.clone() }
    }
}

/// Per-coordinate W1 distances and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W1Report {
    pub labels: Vec<String>,
    pub per_coordinate: Vec<f64>,
    pub aggregate: f64,
    /// Draws per set actually compared.
    pub m: usize,
}

/// Exact 1-D W1 between two equal-size samples (mean absolute difference of
/// order statistics).
pub fn wasserstein1_sorted(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "equal sizes required");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Marginal W1 per coordinate, aggregated by the mean over coordinates.
/// The larger set is subsampled without replacement (seeded) to the size of
/// the smaller one, so the result does not depend on argument order.
pub fn wasserstein1_marginals(a: &SampleSet, b: &SampleSet, seed: u64) -> Result<W1Report, EvaluationError> {
    if a.labels != b.labels {
        let first = a
            .labels
            .iter()
            .zip(&b.labels)
            .find(|(x, y)| x != y)
            .map(|(x, y)| format!("`{x}` vs `{y}`"))
            .unwrap_or_else(|| format!("{} vs {} coordinates", a.dim(), b.dim()));
        return Err(EvaluationError::LabelMismatch(first));
    }
    let m = a.n_draws().min(b.n_draws());
    let shrink = |s: &SampleSet| -> SampleSet {
        if s.n_draws() == m {
            s.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample_indices(&mut rng, s.n_draws(), m).into_vec();
            idx.sort_unstable();
            s.rows_subset(&idx)
        }
    };
    let (a, b) = (shrink(a), shrink(b));
    let per: Vec<f64> = (0..a.dim()).map(|j| wasserstein1_sorted(&a.column(j), &b.column(j))).collect();
    let aggregate = if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 };
    Ok(W1Report { labels: a.labels.clone(), per_coordinate: per, aggregate, m })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn std_normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

pub fn summarize_samples(s: &SampleSet) -> Vec<CoordinateSummary> {
    let m = s.n_draws() as f64;
    (0..s.dim())
        .map(|j| {
            let mut col = s.column(j);
            let mean = col.iter().sum::<f64>() / m;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
            col.sort_by(f64::total_cmp);
            CoordinateSummary {
                label: s.labels[j].clone(),
                mean,
                sd: var.sqrt(),
                q025: quantile_sorted(&col, 0.025),
                q50: quantile_sorted(&col, 0.5),
                q975: quantile_sorted(&col, 0.975),
            }
        })
        .collect()
}

pub fn summarize_gaussian(post: &GaussianPosterior, labels: &[String]) -> Vec<CoordinateSummary> {
    let sd = post.marginal_sd();
    let z = std_normal_quantile(0.975);
    labels
        .iter()
        .zip(post.mean.iter().zip(sd))
        .map(|(label, (&mean, sd))| CoordinateSummary {
            label: label.clone(),
            mean,
            sd,
            q025: mean - z * sd,
            q50: mean,
            q975: mean + z * sd,
        })
        .collect()
}

/// Either an exact Gaussian or a set of draws over the full coefficient vector.
#[derive(Debug, Clone, Copy)]
pub enum PosteriorSource<'a> {
    Gaussian(&'a GaussianPosterior),
    Samples(&'a SampleSet),
}

pub fn posterior_summary(source: PosteriorSource<'_>, labels: &[String]) -> Vec<CoordinateSummary> {
    match source {
        PosteriorSource::Gaussian(g) => summarize_gaussian(g, labels),
        PosteriorSource::Samples(s) => summarize_samples(s),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

/// Evenly spaced grid over a spline block's covariate range.
pub fn block_grid(block: &DesignBlock, points: usize) -> Option<Vec<f64>> {
    let basis = block.basis.as_ref()?;
    Some((0..points).map(|k| basis.lo + (basis.hi - basis.lo) * k as f64 / (points.max(2) - 1) as f64).collect())
}

/// Posterior of `f = X_grid β_block` with a pointwise credible band.
pub fn effect_curve(
    source: PosteriorSource<'_>,
    block: &DesignBlock,
    grid: &[f64],
    level: f64,
) -> Result<EffectCurve, EvaluationError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EvaluationError::InvalidLevel(level));
    }
    if let (TermKind::Pspline, Some(basis)) = (block.kind, block.basis.as_ref()) {
        let slack = 1e-10 * (basis.hi - basis.lo);
        if let Some(&value) = grid.iter().find(|&&v| !(v >= basis.lo - slack && v <= basis.hi + slack)) {
            return Err(EvaluationError::GridOutOfRange { value, lo: basis.lo, hi: basis.hi });
        }
    }
    let xg = block.evaluate(grid)?;
    let r = block.range();
    let n = grid.len();
    let (mut mean, mut lower, mut upper) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    match source {
        PosteriorSource::Gaussian(post) => {
            let cov = post.covariance();
            let z = std_normal_quantile(0.5 + level / 2.0);
            let b = &post.mean[r.clone()];
            for i in 0..n {
                let x = xg.row(i);
                let f = dot(x, b);
                let mut var = 0.0;
                for (a, &xa) in x.iter().enumerate() {
                    for (c, &xc) in x.iter().enumerate() {
                        var += xa * xc * cov[(r.start + a, r.start + c)];
                    }
                }
                let sd = var.max(0.0).sqrt();
                mean[i] = f;
                lower[i] = f - z * sd;
                upper[i] = f + z * sd;
            }
        }
        PosteriorSource::Samples(s) => {
            let m = s.n_draws();
            let alpha = (1.0 - level) / 2.0;
            for i in 0..n {
                let x = xg.row(i);
                let mut f: Vec<f64> = (0..m).map(|k| dot(x, &s.draws().row(k)[r.clone()])).collect();
                mean[i] = f.iter().sum::<f64>() / m as f64;
                f.sort_by(f64::total_cmp);
                lower[i] = quantile_sorted(&f, alpha).min(mean[i]);
                upper[i] = quantile_sorted(&f, 1.0 - alpha).max(mean[i]);
            }
        }
    }
    Ok(EffectCurve { grid: grid.to_vec(), mean, lower, upper, level })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LowerTriangular;
    use rand::Rng;

    fn set(values: &[f64]) -> SampleSet {
        SampleSet::new(Matrix::from_vec(values.len(), 1, values.to_vec()), vec!["a".into()]).unwrap()
    }

    #[test]
    fn w1_examples() {
        let a = set(&[0.3, -1.0, 2.0]);
        assert_eq!(wasserstein1_marginals(&a, &a, 0).unwrap().aggregate, 0.0);
        let r = wasserstein1_marginals(&set(&[0.0, 0.0]), &set(&[1.0, 1.0]), 0).unwrap();
        assert_eq!(r.aggregate, 1.0);
        let r = wasserstein1_marginals(&set(&[0.0, 0.5, 1.0]), &set(&[0.5, 1.0, 1.5]), 0).unwrap();
        assert!((r.aggregate - 0.5).abs() < 1e-15);
    }

    #[test]
    fn w1_label_mismatch() {
        let a = SampleSet::new(Matrix::zeros(2, 1), vec!["a".into()]).unwrap();
        let b = SampleSet::new(Matrix::zeros(2, 1), vec!["b".into()]).unwrap();
        assert!(matches!(wasserstein1_marginals(&a, &b, 0), Err(EvaluationError::LabelMismatch(_))));
    }

    #[test]
    fn w1_metric_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..40).map(|_| rng.random_range(-3.0..3.0)).collect() };
            let (a, b, c) = (set(&draw(&mut rng)), set(&draw(&mut rng)), set(&draw(&mut rng)));
            let ab = wasserstein1_marginals(&a, &b, 3).unwrap().aggregate;
            let ba = wasserstein1_marginals(&b, &a, 3).unwrap().aggregate;
            let bc = wasserstein1_marginals(&b, &c, 3).unwrap().aggregate;
            let ac = wasserstein1_marginals(&a, &c, 3).unwrap().aggregate;
            assert_eq!(ab, ba);
            assert!(ab >= 0.0);
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn unequal_sizes_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = set(&(0..100).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>());
        let b = set(&(0..37).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>());
        let ab = wasserstein1_marginals(&a, &b, 9).unwrap();
        let ba = wasserstein1_marginals(&b, &a, 9).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.m, 37);
    }

    #[test]
    fn w1_shrinks_like_inverse_root_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mean_w1 = |m: usize, rng: &mut ChaCha8Rng| -> f64 {
            let reps = 40;
            (0..reps)
                .map(|_| {
                    let a: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
                    let b: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
                    wasserstein1_sorted(&a, &b)
                })
                .sum::<f64>()
                / reps as f64
        };
        let w = [mean_w1(100, &mut rng), mean_w1(1000, &mut rng), mean_w1(10_000, &mut rng)];
        for k in 0..2 {
            let ratio = w[k + 1] / w[k];
            assert!((0.2..=0.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn gaussian_summary_quantiles() {
        let post = GaussianPosterior::new(vec![0.0], LowerTriangular::identity(1)).unwrap();
        let s = summarize_gaussian(&post, &["b".into()]);
        assert!((s[0].q025 + 1.95996).abs() < 1e-5);
        assert_eq!(s[0].q50, 0.0);
        assert!((s[0].q975 - 1.95996).abs() < 1e-5);
    }

    #[test]
    fn sample_summary() {
        let s = summarize_samples(&set(&[2.0, 2.0, 2.0]));
        assert_eq!(s[0].sd, 0.0);
        let post = GaussianPosterior::new(vec![0.0], LowerTriangular::identity(1)).unwrap();
        let draws = SampleSet::from_gaussian(&post, 100_000, vec!["b".into()], 5).unwrap();
        let s = summarize_samples(&draws);
        assert!((s[0].q025 + 1.959964).abs() < 0.02);
        assert!(s[0].q50.abs() < 0.02);
        assert!((s[0].q975 - 1.959964).abs() < 0.02);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile_sorted(&[0.0, 1.0], 0.25), 0.25);
        assert_eq!(quantile_sorted(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
    }
}
