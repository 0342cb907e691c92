//! JSON posterior artifacts written by `fit` and read by `evaluate`.

use serde::{Deserialize, Serialize};

use crate::evaluation::{EvaluationError, SampleSet};
use crate::inference::{FitResult, TauEstimate};
use crate::linalg::{LowerTriangular, Matrix};
use crate::model::{FamilyName, Model};
use crate::reference::ReferencePosterior;
use crate::variational::GaussianPosterior;

pub const FORMAT: &str = "svidr-posterior";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PosteriorBody {
    /// `N(mean, (L Lᵀ)⁻¹)` with `L` the row-major packed lower Cholesky
    /// factor of the precision.
    Gaussian { mean: Vec<f64>, precision_chol: Vec<f64> },
    /// One inner array per draw.
    Samples { draws: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub variant: String,
    pub epochs: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1_epochs: Option<usize>,
    /// Mean of the per-epoch ELBO estimates over the last 100 epochs.
    pub final_elbo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub method: crate::reference::ReferenceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_normalizer: Option<f64>,
    /// Smoothing parameters the reference conditions on.
    pub tau: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorArtifact {
    pub format: String,
    pub version: u32,
    pub family: FamilyName,
    pub labels: Vec<String>,
    #[serde(flatten)]
    pub body: PosteriorBody,
    pub tau_labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<TauEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceInfo>,
}

fn tail_mean(trace: &[f64], k: usize) -> f64 {
    let finite: Vec<f64> = trace.iter().rev().filter(|v| v.is_finite()).take(k).copied().collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

impl PosteriorArtifact {
    pub fn from_fit(model: &Model, result: &FitResult, variant: String) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            family: model.family().kind(),
            labels: model.design.coefficient_labels(),
            body: PosteriorBody::Gaussian {
                mean: result.posterior.mean.clone(),
                precision_chol: result.posterior.chol.packed().to_vec(),
            },
            tau_labels: model.design.tau_labels(),
            tau: Some(result.tau.clone()),
            fit: Some(FitInfo {
                variant,
                epochs: result.epochs,
                seed: result.seed,
                stage1_epochs: result.stage1_epochs,
                final_elbo: tail_mean(&result.elbo_trace, 100),
            }),
            reference: None,
        }
    }

    pub fn from_reference(model: &Model, reference: &ReferencePosterior, tau: Vec<f64>) -> Self {
        let d = reference.draws.draws();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            family: model.family().kind(),
            labels: reference.draws.labels().to_vec(),
            body: PosteriorBody::Samples { draws: (0..d.rows()).map(|i| d.row(i).to_vec()).collect() },
            tau_labels: model.design.tau_labels(),
            tau: None,
            fit: None,
            reference: Some(ReferenceInfo {
                method: reference.kind,
                acceptance_rate: reference.acceptance_rate,
                log_normalizer: reference.log_normalizer,
                tau,
            }),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.format != FORMAT {
            return Err(format!("format is {:?}, expected {FORMAT:?}", self.format));
        }
        if self.version != VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        let q = self.labels.len();
        match &self.body {
            PosteriorBody::Gaussian { mean, precision_chol } => {
                if mean.len() != q || precision_chol.len() != q * (q + 1) / 2 {
                    return Err(format!("gaussian body does not match {q} labels"));
                }
            }
            PosteriorBody::Samples { draws } => {
                if let Some(i) = draws.iter().position(|d| d.len() != q) {
                    return Err(format!("draw {i} does not match {q} labels"));
                }
            }
        }
        Ok(())
    }

    pub fn gaussian(&self) -> Option<Result<GaussianPosterior, String>> {
        let PosteriorBody::Gaussian { mean, precision_chol } = &self.body else { return None };
        Some(
            LowerTriangular::from_packed(mean.len(), precision_chol.clone())
                .map_err(|e| e.to_string())
                .and_then(|l| GaussianPosterior::new(mean.clone(), l).map_err(|e| e.to_string())),
        )
    }

    /// Draws of the coefficients: the stored samples, or `m` seeded draws
    /// from the Gaussian.
    pub fn sample_set(&self, m: usize, seed: u64) -> Result<SampleSet, String> {
        match &self.body {
            PosteriorBody::Samples { draws } => {
                let q = self.labels.len();
                let flat: Vec<f64> = draws.iter().flatten().copied().collect();
                SampleSet::new(Matrix::from_vec(draws.len(), q, flat), self.labels.clone())
                    .map_err(|e: EvaluationError| e.to_string())
            }
            PosteriorBody::Gaussian { .. } => {
                let post = self.gaussian().expect("gaussian body")?;
                SampleSet::from_gaussian(&post, m, self.labels.clone(), seed).map_err(|e| e.to_string())
            }
        }
    }
}
