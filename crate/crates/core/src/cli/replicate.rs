//! Seeded replications of simulate → fit → reference → evaluate.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::{wasserstein1_marginals, SampleSet};
use crate::inference::{fit, FitConfig, FitResult, TauMode};
use crate::model::{Model, ModelSpec};
use crate::reference::{rwmh_coefficients, ReferencePosterior, RwmhConfig};
use crate::simgen::Scenario;
use crate::variational::FamilyKind;

fn default_checkpoints() -> Vec<usize> {
    vec![100, 500, 1000, 2000]
}
fn default_draws() -> usize {
    4000
}
fn default_reference() -> RwmhConfig {
    RwmhConfig { n_draws: 8000, n_warmup: 20_000, thin: 100 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateConfig {
    pub scenario: Scenario,
    pub model: ModelSpec,
    /// Fit settings of each compared variant; seeds are derived per replicate.
    pub variants: Vec<FitConfig>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<usize>,
    /// Draws taken from each Gaussian posterior for the comparison.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_reference")]
    pub reference: RwmhConfig,
}

impl ReplicateConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.replicates == 0 {
            return Err("replicates must be at least 1".into());
        }
        if self.variants.is_empty() {
            return Err("variants must list at least one fit configuration".into());
        }
        if !self.variants.iter().any(|v| v.tau_mode == TauMode::Point && v.family != FamilyKind::ClassicJoint) {
            return Err("variants need a point-mode fit to supply the reference smoothing parameters".into());
        }
        if self.draws < 2 {
            return Err("draws must be at least 2".into());
        }
        if self.reference.n_draws < 4 {
            return Err("reference.n_draws must be at least 4".into());
        }
        for v in &self.variants {
            if let Some(&c) = self.checkpoints.iter().find(|&&c| c > v.epochs) {
                return Err(format!("checkpoint {c} exceeds epochs = {} of {}", v.epochs, v.variant_name()));
            }
        }
        Ok(())
    }
}

/// Seed for `purpose` in replicate `index`, derived from the master seed.
pub fn derive_seed(master: u64, index: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.set_word_pos(u128::from(purpose) * 2);
    rng.next_u64()
}

const PURPOSE_DATA: u64 = 0;
const PURPOSE_REFERENCE: u64 = 1;
const PURPOSE_DRAWS: u64 = 2;
const PURPOSE_FIT: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replicate: usize,
    pub variant: String,
    pub epoch: usize,
    pub w1: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub replicate: usize,
    /// W1 between the two halves of the reference draws.
    pub baseline_w1: f64,
    pub acceptance_rate: f64,
    pub status: String,
}

#[derive(Debug, Clone, Default)]
pub struct ReplicationTable {
    pub rows: Vec<ReplicationRow>,
    pub baselines: Vec<BaselineRow>,
}

impl ReplicationTable {
    /// Median W1 over successful replicates of a variant at a checkpoint.
    pub fn median_w1(&self, variant: &str, epoch: usize) -> Option<f64> {
        let mut v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant && r.epoch == epoch && r.status == "ok")
            .map(|r| r.w1)
            .collect();
        median(&mut v)
    }

    pub fn median_baseline(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.baselines.iter().filter(|b| b.status == "ok").map(|b| b.baseline_w1).collect();
        median(&mut v)
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

struct ReplicateOutcome {
    rows: Vec<ReplicationRow>,
    baseline: BaselineRow,
}

fn failed_rows(cfg: &ReplicateConfig, r: usize, variant: &str, status: &str) -> Vec<ReplicationRow> {
    cfg.checkpoints
        .iter()
        .map(|&epoch| ReplicationRow {
            replicate: r,
            variant: variant.to_string(),
            epoch,
            w1: f64::NAN,
            status: status.to_string(),
        })
        .collect()
}

fn failed_baseline(r: usize, status: String) -> BaselineRow {
    BaselineRow { replicate: r, baseline_w1: f64::NAN, acceptance_rate: f64::NAN, status }
}

fn reference_for(
    cfg: &ReplicateConfig,
    r: usize,
    model: &Model,
    fits: &[Result<FitResult, String>],
) -> Result<ReferencePosterior, String> {
    let (_, anchor) = cfg
        .variants
        .iter()
        .zip(fits)
        .find(|(v, f)| v.tau_mode == TauMode::Point && v.family != FamilyKind::ClassicJoint && f.is_ok())
        .ok_or_else(|| "no successful point-mode fit to anchor the reference".to_string())?;
    let anchor = anchor.as_ref().expect("filtered on success");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, r as u64, PURPOSE_REFERENCE));
    rwmh_coefficients(model, anchor.tau.location(), &anchor.posterior, &cfg.reference, &mut rng)
        .map_err(|e| e.to_string())
}

fn run_one(cfg: &ReplicateConfig, r: usize) -> ReplicateOutcome {
    let fail_all = |status: String| ReplicateOutcome {
        rows: cfg.variants.iter().flat_map(|v| failed_rows(cfg, r, &v.variant_name(), &status)).collect(),
        baseline: failed_baseline(r, status),
    };
    let scenario = cfg.scenario.with_seed(derive_seed(cfg.seed, r as u64, PURPOSE_DATA));
    let sim = match scenario.generate() {
        Ok(s) => s,
        Err(e) => return fail_all(format!("simulate: {e}")),
    };
    let model = match Model::new(&cfg.model, &sim.data) {
        Ok(m) => m,
        Err(e) => return fail_all(format!("model: {e}")),
    };
    let fits: Vec<Result<FitResult, String>> = cfg
        .variants
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let mut fc = v.clone();
            fc.seed = derive_seed(cfg.seed, r as u64, PURPOSE_FIT + k as u64);
            fc.checkpoints = cfg.checkpoints.clone();
            fit(&model, &fc).map_err(|e| format!("fit: {e}"))
        })
        .collect();
    let reference = match reference_for(cfg, r, &model, &fits) {
        Ok(p) => p,
        Err(e) => {
            let status = format!("reference: {e}");
            return ReplicateOutcome {
                rows: cfg.variants.iter().flat_map(|v| failed_rows(cfg, r, &v.variant_name(), &status)).collect(),
                baseline: failed_baseline(r, status),
            };
        }
    };
    let half = reference.draws.n_draws() / 2;
    let first: Vec<usize> = (0..half).collect();
    let second: Vec<usize> = (half..2 * half).collect();
    let baseline = match wasserstein1_marginals(
        &reference.draws.rows_subset(&first),
        &reference.draws.rows_subset(&second),
        derive_seed(cfg.seed, r as u64, PURPOSE_DRAWS),
    ) {
        Ok(w) => BaselineRow {
            replicate: r,
            baseline_w1: w.aggregate,
            acceptance_rate: reference.acceptance_rate.unwrap_or(f64::NAN),
            status: "ok".into(),
        },
        Err(e) => failed_baseline(r, format!("baseline: {e}")),
    };
    let labels = model.design.coefficient_labels();
    let mut rows = Vec::new();
    for (k, (v, f)) in cfg.variants.iter().zip(&fits).enumerate() {
        let name = v.variant_name();
        let result = match f {
            Ok(f) => f,
            Err(e) => {
                rows.extend(failed_rows(cfg, r, &name, e));
                continue;
            }
        };
        for cp in &result.checkpoints {
            let seed = derive_seed(cfg.seed, r as u64, PURPOSE_FIT + 1000 + k as u64) ^ cp.epoch as u64;
            let row = SampleSet::from_gaussian(&cp.posterior, cfg.draws, labels.clone(), seed)
                .and_then(|s| wasserstein1_marginals(&s, &reference.draws, seed));
            rows.push(match row {
                Ok(w) => ReplicationRow {
                    replicate: r,
                    variant: name.clone(),
                    epoch: cp.epoch,
                    w1: w.aggregate,
                    status: "ok".into(),
                },
                Err(e) => ReplicationRow {
                    replicate: r,
                    variant: name.clone(),
                    epoch: cp.epoch,
                    w1: f64::NAN,
                    status: format!("evaluate: {e}"),
                },
            });
        }
    }
    ReplicateOutcome { rows, baseline }
}

/// Runs every replicate in parallel. Failures are recorded per row and do not
/// stop the other replicates.
pub fn run_replications(cfg: &ReplicateConfig) -> ReplicationTable {
    let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates).into_par_iter().map(|r| run_one(cfg, r)).collect();
    let mut table = ReplicationTable::default();
    for o in outcomes {
        table.rows.extend(o.rows);
        table.baselines.push(o.baseline);
    }
    table
}
