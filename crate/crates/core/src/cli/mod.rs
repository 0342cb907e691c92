//! The `svidr` command-line tool: configuration, commands and output files.

pub mod artifact;
pub mod replicate;
pub mod svg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, TermKind};
use crate::data::{DataError, Dataset};
use crate::evaluation::{block_grid, effect_curve, posterior_summary, wasserstein1_marginals, PosteriorSource};
use crate::inference::{fit, FitConfig, InferenceError};
use crate::model::{Model, ModelError, ModelSpec};
use crate::reference::{conjugate_gaussian_posterior, grid_posterior, rwmh_coefficients, ReferenceError, RwmhConfig};
use crate::simgen::Scenario;
use artifact::PosteriorArtifact;
use replicate::{run_replications, ReplicateConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numerical(_) => 4,
            Self::Output(_) => 1,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::InvalidSpec(_)
            | ModelError::Basis(BasisError::InvalidTerm(_) | BasisError::OrderTooLarge { .. }) => {
                Self::Config(e.to_string())
            }
            ModelError::NonFinitePredictor
            | ModelError::Basis(BasisError::Linalg(_))
            | ModelError::DimensionMismatch { .. } => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::InvalidConfig(m) => Self::Config(format!("fit: {m}")),
            e => Self::Numerical(e.to_string()),
        }
    }
}

impl From<ReferenceError> for CliError {
    fn from(e: ReferenceError) -> Self {
        match e {
            ReferenceError::InvalidConfig(_)
            | ReferenceError::DimensionTooHigh(_)
            | ReferenceError::NotConjugate(_) => Self::Config(format!("reference: {e}")),
            e => Self::Numerical(format!("reference: {e}")),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "svidr",
    version,
    about = "Stochastic variational inference for structured additive distributional regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// TOML configuration, or a run_manifest.json from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed given in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV dataset.
    Fit(CommonArgs),
    /// Generate a simulation scenario dataset.
    Simulate(CommonArgs),
    /// Compare a fitted posterior with a reference posterior.
    Evaluate(CommonArgs),
    /// Run seeded simulate → fit → reference → evaluate replications.
    Replicate(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Fit(_) => "fit",
            Self::Simulate(_) => "simulate",
            Self::Evaluate(_) => "evaluate",
            Self::Replicate(_) => "replicate",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Self::Fit(a) | Self::Simulate(a) | Self::Evaluate(a) | Self::Replicate(a) => a,
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_grid_points() -> usize {
    100
}
fn default_level() -> f64 {
    0.95
}
fn default_reference_draws() -> usize {
    4000
}
fn default_resolution() -> usize {
    101
}
fn default_half_width() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Write `effect_<term>.csv` and `.svg` for every spline term.
    #[serde(default = "default_true")]
    pub effects: bool,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { effects: true, grid_points: default_grid_points(), level: default_level() }
    }
}

/// Reference posterior computed after the fit, conditional on the fitted
/// smoothing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSettings {
    Rwmh {
        n_draws: usize,
        n_warmup: usize,
        #[serde(default = "default_thin")]
        thin: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Box of `half_width` fitted standard deviations around the fitted mean.
    Grid {
        #[serde(default = "default_resolution")]
        resolution: usize,
        #[serde(default = "default_reference_draws")]
        n_draws: usize,
        #[serde(default = "default_half_width")]
        half_width: f64,
        #[serde(default)]
        seed: u64,
    },
    Conjugate {
        #[serde(default = "default_reference_draws")]
        n_draws: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_thin() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRunConfig {
    /// CSV file; relative paths resolve against the configuration file.
    pub data: PathBuf,
    pub model: ModelSpec,
    pub fit: FitConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRunConfig {
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRunConfig {
    /// Posterior artifact of the fit.
    pub svi: PathBuf,
    /// Posterior artifact of the reference.
    pub reference: PathBuf,
    /// Draws taken from Gaussian artifacts, all with the same seed.
    #[serde(default = "default_reference_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Written to every output directory; accepted back by `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    joined.canonicalize().unwrap_or(joined)
}

/// Reads a TOML configuration or a JSON run manifest for `command`.
pub fn load_config<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if manifest.command != command {
            return Err(CliError::Config(format!(
                "manifest {} was written by `{}`, not `{command}`",
                path.display(),
                manifest.command
            )));
        }
        serde_json::from_value(manifest.config).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Writes via a temporary file in the same directory and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::Output(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::Output(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(err)?;
    f.write_all(bytes).map_err(err)?;
    f.sync_all().map_err(err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn write_csv_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

fn write_manifest<T: Serialize>(out: &Path, command: &str, config: &T) -> Result<(), CliError> {
    let manifest = RunManifest {
        tool: "svidr".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config: serde_json::to_value(config).map_err(|e| CliError::Output(e.to_string()))?,
    };
    write_json(&out.join("run_manifest.json"), &manifest)
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Output(format!("{}: {e}", out.display())))
}

fn data_error(e: DataError) -> CliError {
    CliError::Data(e.to_string())
}

/// File-name-safe form of a term label, e.g. `mu:s(x)` → `mu_s_x`.
pub fn term_slug(label: &str) -> String {
    let mut s: String = label.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}

#[derive(Serialize)]
struct TraceRow {
    epoch: usize,
    elbo: f64,
    se: f64,
}

#[derive(Serialize)]
struct EffectRow {
    x: f64,
    mean: f64,
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct W1Row<'a> {
    label: &'a str,
    w1: f64,
}

pub fn cmd_fit(mut cfg: FitRunConfig, base: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    if let Some(s) = seed {
        cfg.fit.seed = s;
    }
    cfg.data = resolve(base, &cfg.data);
    if !(cfg.output.level > 0.0 && cfg.output.level < 1.0) || cfg.output.grid_points < 2 {
        return Err(CliError::Config("output.level must lie in (0, 1) and output.grid_points be at least 2".into()));
    }
    cfg.model.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
    let data = Dataset::read_csv_path(&cfg.data).map_err(data_error)?;
    let model = Model::new(&cfg.model, &data)?;
    cfg.fit.validate(&model)?;
    prepare_out(out)?;
    write_manifest(out, "fit", &cfg)?;
    let result = fit(&model, &cfg.fit)?;
    let labels = model.design.coefficient_labels();
    write_json(&out.join("posterior.json"), &PosteriorArtifact::from_fit(&model, &result, cfg.fit.variant_name()))?;
    let trace: Vec<TraceRow> = result
        .elbo_trace
        .iter()
        .zip(&result.elbo_se)
        .enumerate()
        .map(|(k, (&elbo, &se))| TraceRow { epoch: k + 1, elbo, se })
        .collect();
    write_csv_rows(&out.join("elbo_trace.csv"), &trace)?;
    write_csv_rows(
        &out.join("summary.csv"),
        &posterior_summary(PosteriorSource::Gaussian(&result.posterior), &labels),
    )?;
    if cfg.output.effects {
        for block in model.design.blocks.iter().filter(|b| b.kind == TermKind::Pspline) {
            let grid = block_grid(block, cfg.output.grid_points).expect("spline blocks carry a basis");
            let curve = effect_curve(PosteriorSource::Gaussian(&result.posterior), block, &grid, cfg.output.level)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let rows: Vec<EffectRow> = (0..grid.len())
                .map(|i| EffectRow {
                    x: curve.grid[i],
                    mean: curve.mean[i],
                    lower: curve.lower[i],
                    upper: curve.upper[i],
                })
                .collect();
            let slug = term_slug(&block.label);
            write_csv_rows(&out.join(format!("effect_{slug}.csv")), &rows)?;
            let svg = svg::effect_svg(&curve, &block.label, block.covariate.as_deref().unwrap_or("x"));
            write_atomic(&out.join(format!("effect_{slug}.svg")), svg.as_bytes())?;
        }
    }
    if let Some(settings) = &cfg.reference {
        let tau = result.tau.location().to_vec();
        let reference = match settings {
            ReferenceSettings::Rwmh { n_draws, n_warmup, thin, seed } => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                let rc = RwmhConfig { n_draws: *n_draws, n_warmup: *n_warmup, thin: *thin };
                rwmh_coefficients(&model, &tau, &result.posterior, &rc, &mut rng)?
            }
            ReferenceSettings::Grid { resolution, n_draws, half_width, seed } => {
                let sd = result.posterior.marginal_sd();
                let bounds: Vec<(f64, f64)> = result
                    .posterior
                    .mean
                    .iter()
                    .zip(&sd)
                    .map(|(m, s)| (m - half_width * s, m + half_width * s))
                    .collect();
                grid_posterior(|b| model.log_joint(b, &tau), &bounds, *resolution, *n_draws, labels.clone(), *seed)?
            }
            ReferenceSettings::Conjugate { n_draws, seed } => {
                conjugate_gaussian_posterior(&model, &tau, *n_draws, *seed)?
            }
        };
        write_json(&out.join("reference.json"), &PosteriorArtifact::from_reference(&model, &reference, tau))?;
    }
    Ok(())
}

pub fn cmd_simulate(mut cfg: SimulateRunConfig, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    if let Some(s) = seed {
        cfg.scenario = cfg.scenario.with_seed(s);
    }
    let sim = cfg.scenario.generate().map_err(|e| CliError::Config(format!("scenario: {e}")))?;
    prepare_out(out)?;
    write_manifest(out, "simulate", &cfg)?;
    let mut buf = Vec::new();
    sim.data.write_csv(&mut buf).map_err(data_error)?;
    write_atomic(&out.join("data.csv"), &buf)?;
    write_json(&out.join("metadata.json"), &sim.metadata)?;
    write_json(&out.join("truth.json"), &sim.truth)
}

fn load_artifact(path: &Path) -> Result<PosteriorArtifact, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let a: PosteriorArtifact =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    a.check().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(a)
}

pub fn cmd_evaluate(mut cfg: EvaluateRunConfig, base: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.svi = resolve(base, &cfg.svi);
    cfg.reference = resolve(base, &cfg.reference);
    if cfg.draws < 2 {
        return Err(CliError::Config("draws must be at least 2".into()));
    }
    let a = load_artifact(&cfg.svi)?;
    let b = load_artifact(&cfg.reference)?;
    if a.labels != b.labels {
        return Err(CliError::Data(format!(
            "coefficient labels differ between {} and {}",
            cfg.svi.display(),
            cfg.reference.display()
        )));
    }
    let sa = a.sample_set(cfg.draws, cfg.seed).map_err(CliError::Data)?;
    let sb = b.sample_set(cfg.draws, cfg.seed).map_err(CliError::Data)?;
    let report = wasserstein1_marginals(&sa, &sb, cfg.seed).map_err(|e| CliError::Data(e.to_string()))?;
    prepare_out(out)?;
    write_manifest(out, "evaluate", &cfg)?;
    let mut rows: Vec<W1Row> =
        report.labels.iter().zip(&report.per_coordinate).map(|(l, &w1)| W1Row { label: l, w1 }).collect();
    rows.push(W1Row { label: "aggregate", w1: report.aggregate });
    write_csv_rows(&out.join("wd.csv"), &rows)
}

pub fn cmd_replicate(mut cfg: ReplicateConfig, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(CliError::Config)?;
    cfg.model.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
    prepare_out(out)?;
    write_manifest(out, "replicate", &cfg)?;
    let table = run_replications(&cfg);
    write_csv_rows(&out.join("replications.csv"), &table.rows)?;
    write_csv_rows(&out.join("baselines.csv"), &table.baselines)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let args = cli.command.args().clone();
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    let name = cli.command.name();
    match cli.command {
        Command::Fit(_) => cmd_fit(load_config(&args.config, name)?, &base, &args.out, args.seed),
        Command::Simulate(_) => cmd_simulate(load_config(&args.config, name)?, &args.out, args.seed),
        Command::Evaluate(_) => cmd_evaluate(load_config(&args.config, name)?, &base, &args.out, args.seed),
        Command::Replicate(_) => cmd_replicate(load_config(&args.config, name)?, &args.out, args.seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(term_slug("mu:s(x)"), "mu_s_x");
        assert_eq!(term_slug("sigma2:s(x_1)"), "sigma2_s_x_1");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "data = \"d.csv\"\nbogus = 1\n[model]\nfamily = \"gaussian\"\n[fit]\nfamily = \"local_full\"\ntau_mode = \"point\"\n";
        assert!(toml::from_str::<FitRunConfig>(text).is_err());
        let ok = text.replace("bogus = 1\n", "");
        assert!(toml::from_str::<FitRunConfig>(&ok).is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Data(String::new()).exit_code(), 3);
        assert_eq!(CliError::Numerical(String::new()).exit_code(), 4);
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
