//! JSON-configured experiments with checksummed artifacts.
//!
//! A run reads one [`ExperimentConfig`], executes it in named stages on a
//! worker pool and writes CSV/JSON artifacts plus `manifest.json` into the
//! output directory. Artifacts depend only on the configuration: every
//! random stream is derived per shard from the master seed, so the worker
//! count changes wall-clock time and nothing else.
//!
//! The optional wall-clock budget is checked between stages. Stages that
//! would start after it is spent are recorded as skipped and the manifest
//! is marked non-final.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::curves::{
    first_step_check, growth_lemma_check, level_family, push_forward, unstable_width_law, z_function, ConditionReport,
    ConditionStatus, CurveError, PushOptions, SectionReturn, WidthOptions,
};
use crate::dynamics::falling_balls::FallingBalls;
use crate::dynamics::tables::{flat_point_table, flowers_table, FlatPointSpec, FlowerSpec};
use crate::dynamics::{
    first_return_stream, observe, return_histogram, sample_returns, DynamicsError, Selector, StreamOptions, System,
    DEFAULT_BALLS_BURN_IN,
};
use crate::estat::{
    clt_diagnostic, green_kubo_variance, predicted_correlation, EstatError, Observable, Support, TailSource,
    DEFAULT_BATCHES,
};
use crate::fit;
use crate::rv::{self, RegVar, RegVarSpec, RvError};
use crate::tower::{self, Cell, CmzModel, HatOptions, MainOptions, TowerError, SHARDS};

/// Schema identifier written into every manifest.
pub const MANIFEST_SCHEMA: &str = "cmz-manifest/1";

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "CMZ_WORKERS";

/// Event budgets above this refuse to keep per-return records.
pub const MAX_RECORDED_EVENTS: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Estat(#[from] EstatError),
    #[error(transparent)]
    Curves(#[from] CurveError),
    #[error(transparent)]
    Rv(#[from] RvError),
    #[error(transparent)]
    Fit(#[from] fit::FitError),
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> RunError {
    RunError::Field { field: field.into(), message: message.into() }
}

/// One experiment and its execution parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    /// Overridden by an explicit worker count at run time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Used when no output directory is given at run time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    RvCheck(RvCheckConfig),
    TowerVerify(TowerVerifyConfig),
    FallingBalls(BallsConfig),
    Flowers(FlowersConfig),
    FlatPoints(FlatPointsConfig),
    CurvesDiagnostics(CurvesConfig),
    Correlation(CorrelationConfig),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::RvCheck(_) => "rv-check",
            Experiment::TowerVerify(_) => "tower-verify",
            Experiment::FallingBalls(_) => "falling-balls",
            Experiment::Flowers(_) => "flowers",
            Experiment::FlatPoints(_) => "flat-points",
            Experiment::CurvesDiagnostics(_) => "curves-diagnostics",
            Experiment::Correlation(_) => "correlation",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn yes() -> bool {
    true
}

fn default_index_window() -> (f64, f64) {
    rv::DEFAULT_INDEX_WINDOW
}

fn default_grid_points() -> usize {
    200
}

fn default_tail_sum_ns() -> Vec<u64> {
    vec![10, 100, 1000, 10_000]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RvCheckConfig {
    pub tail: RegVarSpec,
    #[serde(default = "default_index_window")]
    pub window: (f64, f64),
    /// Geometric grid size over the window.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "two")]
    pub lambda: f64,
    #[serde(default = "default_tail_sum_ns")]
    pub tail_sum_ns: Vec<u64>,
}

/// Where a tower model comes from. Synthetic models use the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSource {
    Synthetic {
        tail: RegVarSpec,
        rho: f64,
        n_cells: usize,
        #[serde(default)]
        clustering: f64,
    },
    Cells {
        cells: Vec<Cell>,
        rho: f64,
        #[serde(default)]
        two_sided: bool,
    },
}

impl ModelSource {
    fn build(&self, seed: u64, field: &str) -> Result<CmzModel, RunError> {
        match self {
            ModelSource::Synthetic { tail, rho, n_cells, clustering } => {
                let r =
                    RegVar::try_from(tail.clone()).map_err(|e| field_err(format!("{field}.tail"), e.to_string()))?;
                tower::build_synthetic(&r, *rho, *n_cells, *clustering, seed)
                    .map_err(|e| field_err(field, e.to_string()))
            }
            ModelSource::Cells { cells, rho, two_sided } => {
                CmzModel::from_cells(cells.clone(), *rho, *two_sided).map_err(|e| field_err(field, e.to_string()))
            }
        }
    }

    fn tail(&self) -> Option<&RegVarSpec> {
        match self {
            ModelSource::Synthetic { tail, .. } => Some(tail),
            ModelSource::Cells { .. } => None,
        }
    }
}

fn default_hat_q() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HatConfig {
    #[serde(default = "two")]
    pub b: f64,
    #[serde(default = "default_hat_q")]
    pub q: f64,
    pub ks: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TowerVerifyConfig {
    pub model: ModelSource,
    pub n_max: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(u64, u64)>,
    /// Reference tail for the transfer check; synthetic models default to
    /// their own target tail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<RegVarSpec>,
    #[serde(default = "one")]
    pub lower_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hat: Option<HatConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo_steps: Option<u64>,
}

fn default_fit_window() -> (u64, u64) {
    (10, 100)
}

fn default_max_r() -> u64 {
    100_000
}

/// Budget and fit window of a return-time tail run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailRunConfig {
    pub n_events: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    #[serde(default = "default_fit_window")]
    pub fit_window: (u64, u64),
    /// Largest return time histogrammed individually.
    #[serde(default = "default_max_r")]
    pub max_r: u64,
    /// Also write every return with its section point.
    #[serde(default)]
    pub records: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallsConfig {
    #[serde(default)]
    pub system: FallingBalls,
    pub run: TailRunConfig,
}

fn first_focusing() -> Selector {
    Selector::FirstFocusing
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowersConfig {
    #[serde(default)]
    pub table: FlowerSpec,
    #[serde(default = "first_focusing")]
    pub selector: Selector,
    pub run: TailRunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatPointsConfig {
    #[serde(default)]
    pub table: FlatPointSpec,
    /// Radius of the excluded neighbourhood of each flat point; defaults to
    /// [`FlatPointSpec::default_radius`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Repeat the run with half the radius and report the exponent shift.
    #[serde(default = "yes")]
    pub halving_check: bool,
    pub run: TailRunConfig,
}

/// A physical system with its fast subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PhysicalSystem {
    FallingBalls {
        #[serde(default)]
        system: FallingBalls,
    },
    Flowers {
        #[serde(default)]
        table: FlowerSpec,
        #[serde(default = "first_focusing")]
        selector: Selector,
    },
    FlatPoints {
        #[serde(default)]
        table: FlatPointSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
}

impl PhysicalSystem {
    pub fn build(&self, field: &str) -> Result<System, RunError> {
        match self {
            PhysicalSystem::FallingBalls { system } => {
                let s = FallingBalls::new(system.m1, system.m2, system.g, system.energy)
                    .map_err(|e| field_err(format!("{field}.system"), e.to_string()))?;
                Ok(System::FallingBalls(s))
            }
            PhysicalSystem::Flowers { table, selector } => {
                let t = flowers_table(table).map_err(|e| field_err(format!("{field}.table"), e.to_string()))?;
                Ok(System::Billiard { table: t, selector: *selector })
            }
            PhysicalSystem::FlatPoints { table, radius } => {
                let t = flat_point_table(table).map_err(|e| field_err(format!("{field}.table"), e.to_string()))?;
                let radius = radius.unwrap_or_else(|| table.default_radius());
                if !(radius >= 0.0 && radius.is_finite()) {
                    return Err(field_err(format!("{field}.radius"), "must be a finite non-negative number"));
                }
                Ok(System::Billiard { table: t, selector: Selector::AwayFromFlat { radius } })
            }
        }
    }

    fn default_burn_in(&self) -> u64 {
        match self {
            PhysicalSystem::FallingBalls { .. } => DEFAULT_BALLS_BURN_IN,
            _ => 0,
        }
    }

    /// Tail index of the return time predicted for the system.
    pub fn reference_alpha(&self) -> f64 {
        match self {
            PhysicalSystem::FlatPoints { table, .. } => table.tail_index(),
            _ => 3.0,
        }
    }
}

fn default_per_level() -> usize {
    10
}

fn default_mesh_points() -> usize {
    65
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstStepConfig {
    pub ks: Vec<u64>,
    /// Width exponent used to convert the slope into `p`; defaults to the
    /// fitted width exponent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthConfig {
    pub k: u64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesConfig {
    pub system: PhysicalSystem,
    pub n_events: u64,
    /// Levels `k` of the sets `R_k = {R = k + 1}` used for the width law.
    pub ks: Vec<u64>,
    /// Samples kept per value of `R` and shard.
    #[serde(default = "default_per_level")]
    pub per_level: usize,
    #[serde(default)]
    pub width: WidthOptions,
    /// Mesh points per curve of a level family.
    #[serde(default = "default_mesh_points")]
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_step: Option<FirstStepConfig>,
    /// Declared first-step expansion exponent for the consistency check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CorrelationSource {
    Tower { model: ModelSource, steps: u64 },
    Physical { system: PhysicalSystem, n_events: u64 },
}

fn default_pilot_events() -> u64 {
    10_000_000
}

/// Observable used for both sides of the correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// Indicator of the base (towers) or of the fast subset.
    #[default]
    Indicator,
    /// Section coordinate `index` on the fast subset, minus its mean over
    /// the fast subset estimated from a pilot run with a derived seed.
    Coordinate {
        index: usize,
        #[serde(default = "default_pilot_events")]
        pilot_events: u64,
    },
    Bump {
        center: Vec<f64>,
        radius: f64,
        height: f64,
        #[serde(default)]
        fast_only: bool,
    },
}

fn default_max_lag() -> u64 {
    30
}

fn default_batches() -> u64 {
    DEFAULT_BATCHES
}

fn default_fit_range() -> (u64, u64) {
    (5, 30)
}

fn default_block_len() -> u64 {
    10_000
}

fn default_min_blocks() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    #[serde(default = "default_block_len")]
    pub block_len: u64,
    /// Variance ratios backed by fewer aggregated blocks are reported but
    /// not compared with the Green-Kubo value.
    #[serde(default = "default_min_blocks")]
    pub min_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationConfig {
    pub source: CorrelationSource,
    #[serde(default)]
    pub observable: ObservableSpec,
    /// Lags `0..=max_lag` are estimated.
    #[serde(default = "default_max_lag")]
    pub max_lag: u64,
    /// Batches per shard for the batch-means standard error.
    #[serde(default = "default_batches")]
    pub batches: u64,
    /// Lag range of the log-log slope fit.
    #[serde(default = "default_fit_range")]
    pub fit_range: (u64, u64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltConfig>,
}

/// Parses a configuration; errors carry the path of the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, RunError> {
    let value: Value = serde_json::from_str(text).map_err(|e| field_err("<document>", e.to_string()))?;
    match serde_path_to_error::deserialize::<_, ExperimentConfig>(&value) {
        Ok(c) => Ok(c),
        Err(err) => {
            let path = err.path().to_string();
            // Internally tagged enums buffer their content, which hides the
            // path below `experiment`; re-parse the variant on its own.
            if path == "experiment" {
                if let Some(inner) = variant_error(&value["experiment"]) {
                    return Err(inner);
                }
            }
            Err(field_err(if path == "." { "<root>".to_string() } else { path }, err.into_inner().to_string()))
        }
    }
}

fn variant_error(v: &Value) -> Option<RunError> {
    fn check<T: serde::de::DeserializeOwned>(v: &Value) -> Option<RunError> {
        let mut body = v.clone();
        body.as_object_mut()?.remove("kind");
        serde_path_to_error::deserialize::<_, T>(&body).err().map(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "experiment".to_string() } else { format!("experiment.{path}") };
            field_err(field, e.into_inner().to_string())
        })
    }
    match v.get("kind")?.as_str()? {
        "rv-check" => check::<RvCheckConfig>(v),
        "tower-verify" => check::<TowerVerifyConfig>(v),
        "falling-balls" => check::<BallsConfig>(v),
        "flowers" => check::<FlowersConfig>(v),
        "flat-points" => check::<FlatPointsConfig>(v),
        "curves-diagnostics" => check::<CurvesConfig>(v),
        "correlation" => check::<CorrelationConfig>(v),
        _ => None,
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::Read { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

fn positive(field: &str, v: u64) -> Result<(), RunError> {
    if v == 0 {
        return Err(field_err(field, "must be positive"));
    }
    Ok(())
}

fn window_ok(field: &str, lo: f64, hi: f64) -> Result<(), RunError> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(field_err(field, format!("need 0 < lo < hi, got ({lo}, {hi})")));
    }
    Ok(())
}

fn regvar(field: &str, spec: &RegVarSpec) -> Result<RegVar, RunError> {
    RegVar::try_from(spec.clone()).map_err(|e| field_err(field, e.to_string()))
}

fn tail_run_ok(field: &str, run: &TailRunConfig) -> Result<(), RunError> {
    positive(&format!("{field}.n_events"), run.n_events)?;
    positive(&format!("{field}.max_r"), run.max_r)?;
    let (lo, hi) = run.fit_window;
    window_ok(&format!("{field}.fit_window"), lo as f64, hi as f64)?;
    if hi > run.max_r {
        return Err(field_err(format!("{field}.fit_window"), "upper end exceeds max_r"));
    }
    if run.records && run.n_events > MAX_RECORDED_EVENTS {
        return Err(field_err(
            format!("{field}.records"),
            format!("records are limited to runs of at most {MAX_RECORDED_EVENTS} events"),
        ));
    }
    Ok(())
}

fn model_ok(field: &str, m: &ModelSource) -> Result<(), RunError> {
    match m {
        ModelSource::Synthetic { tail, rho, n_cells, clustering } => {
            let r = regvar(&format!("{field}.tail"), tail)?;
            if r.alpha() <= 1.0 {
                return Err(field_err(format!("{field}.tail.index"), "must exceed 1"));
            }
            if !(*rho > 0.0 && *rho < 1.0) {
                return Err(field_err(format!("{field}.rho"), "must lie in (0, 1)"));
            }
            positive(&format!("{field}.n_cells"), *n_cells as u64)?;
            if !(0.0..=1.0).contains(clustering) {
                return Err(field_err(format!("{field}.clustering"), "must lie in [0, 1]"));
            }
            Ok(())
        }
        ModelSource::Cells { .. } => m.build(0, field).map(|_| ()),
    }
}

impl ExperimentConfig {
    /// Checks budgets and the referenced table and model specs.
    pub fn validate(&self) -> Result<(), RunError> {
        if let Some(s) = self.max_wall_seconds {
            if !(s > 0.0) {
                return Err(field_err("max_wall_seconds", "must be positive"));
            }
        }
        if self.workers == Some(0) {
            return Err(field_err("workers", "must be positive"));
        }
        let f = "experiment";
        match &self.experiment {
            Experiment::RvCheck(c) => {
                let r = regvar(&format!("{f}.tail"), &c.tail)?;
                window_ok(&format!("{f}.window"), c.window.0, c.window.1)?;
                if c.grid_points < 3 {
                    return Err(field_err(format!("{f}.grid_points"), "need at least 3"));
                }
                if !(c.lambda > 0.0) {
                    return Err(field_err(format!("{f}.lambda"), "must be positive"));
                }
                if c.tail_sum_ns.contains(&0) {
                    return Err(field_err(format!("{f}.tail_sum_ns"), "entries must be positive"));
                }
                if !c.tail_sum_ns.is_empty() && r.alpha() <= 1.0 {
                    return Err(field_err(format!("{f}.tail_sum_ns"), "tail sums diverge for index <= 1"));
                }
            }
            Experiment::TowerVerify(c) => {
                model_ok(&format!("{f}.model"), &c.model)?;
                if c.n_max < 10 {
                    return Err(field_err(format!("{f}.n_max"), "need at least 10"));
                }
                if let Some((lo, hi)) = c.window {
                    if lo < 1 || hi > c.n_max || hi < 2 * lo {
                        return Err(field_err(format!("{f}.window"), "need 1 <= lo, 2 lo <= hi <= n_max"));
                    }
                }
                if let Some(r) = &c.reference {
                    regvar(&format!("{f}.reference"), r)?;
                }
                if let Some(h) = &c.hat {
                    if h.ks.is_empty() {
                        return Err(field_err(format!("{f}.hat.ks"), "must not be empty"));
                    }
                    if !(h.q > 0.0 && h.q < 1.0) {
                        return Err(field_err(format!("{f}.hat.q"), "must lie in (0, 1)"));
                    }
                }
                if let Some(s) = c.monte_carlo_steps {
                    positive(&format!("{f}.monte_carlo_steps"), s)?;
                }
            }
            Experiment::FallingBalls(c) => {
                PhysicalSystem::FallingBalls { system: c.system }.build(f)?;
                tail_run_ok(&format!("{f}.run"), &c.run)?;
            }
            Experiment::Flowers(c) => {
                PhysicalSystem::Flowers { table: c.table.clone(), selector: c.selector }.build(f)?;
                tail_run_ok(&format!("{f}.run"), &c.run)?;
            }
            Experiment::FlatPoints(c) => {
                PhysicalSystem::FlatPoints { table: c.table, radius: c.radius }.build(f)?;
                tail_run_ok(&format!("{f}.run"), &c.run)?;
            }
            Experiment::CurvesDiagnostics(c) => {
                c.system.build(&format!("{f}.system"))?;
                positive(&format!("{f}.n_events"), c.n_events)?;
                if c.ks.len() < 2 || c.ks.contains(&0) {
                    return Err(field_err(format!("{f}.ks"), "need at least two positive levels"));
                }
                positive(&format!("{f}.per_level"), c.per_level as u64)?;
                if c.points < 3 {
                    return Err(field_err(format!("{f}.points"), "need at least 3"));
                }
                if let Some(fs) = &c.first_step {
                    if fs.ks.len() < 2 || fs.ks.contains(&0) {
                        return Err(field_err(format!("{f}.first_step.ks"), "need at least two positive levels"));
                    }
                }
                if let Some(g) = &c.growth {
                    positive(&format!("{f}.growth.k"), g.k)?;
                    positive(&format!("{f}.growth.steps"), g.steps as u64)?;
                }
            }
            Experiment::Correlation(c) => {
                let physical = match &c.source {
                    CorrelationSource::Tower { model, steps } => {
                        model_ok(&format!("{f}.source.model"), model)?;
                        positive(&format!("{f}.source.steps"), *steps)?;
                        false
                    }
                    CorrelationSource::Physical { system, n_events } => {
                        system.build(&format!("{f}.source.system"))?;
                        positive(&format!("{f}.source.n_events"), *n_events)?;
                        true
                    }
                };
                if !physical && c.observable != ObservableSpec::Indicator {
                    return Err(field_err(format!("{f}.observable"), "tower runs support the indicator only"));
                }
                if !physical && c.clt.is_some() {
                    return Err(field_err(format!("{f}.clt"), "the CLT diagnostic needs a physical source"));
                }
                positive(&format!("{f}.max_lag"), c.max_lag)?;
                positive(&format!("{f}.batches"), c.batches)?;
                let (lo, hi) = c.fit_range;
                if lo == 0 || hi <= lo || hi > c.max_lag {
                    return Err(field_err(format!("{f}.fit_range"), "need 0 < lo < hi <= max_lag"));
                }
                if let ObservableSpec::Bump { radius, .. } = &c.observable {
                    if !(*radius > 0.0) {
                        return Err(field_err(format!("{f}.observable.radius"), "must be positive"));
                    }
                }
                if let ObservableSpec::Coordinate { index, pilot_events } = &c.observable {
                    if *index > 3 {
                        return Err(field_err(format!("{f}.observable.index"), "section coordinates are 0..=3"));
                    }
                    positive(&format!("{f}.observable.pilot_events"), *pilot_events)?;
                }
                if let Some(clt) = &c.clt {
                    positive(&format!("{f}.clt.block_len"), clt.block_len)?;
                }
                let total = match &c.source {
                    CorrelationSource::Tower { steps, .. } => *steps,
                    CorrelationSource::Physical { n_events, .. } => *n_events / SHARDS as u64,
                };
                if total / c.batches < 10 * c.max_lag {
                    return Err(field_err(
                        format!("{f}.batches"),
                        "each batch needs at least 10 max_lag points; raise the budget or lower batches",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Worker count: explicit value, then the config, then the environment,
/// then every available core (`0`).
pub fn resolve_workers(explicit: Option<usize>, config: Option<usize>) -> usize {
    explicit.or(config).or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok())).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Done,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seconds: f64,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub crate_name: String,
    pub crate_version: String,
    pub kind: String,
    pub config: ExperimentConfig,
    /// Worker threads used; `0` means every available core.
    pub workers: usize,
    pub wall_clock_seconds: f64,
    /// False when a stage was skipped for budget or the run failed.
    #[serde(rename = "final")]
    pub is_final: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileEntry>,
}

/// Where and how a run executes.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Falls back to the config's `output_dir`.
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

struct Ctx {
    dir: PathBuf,
    files: Vec<FileEntry>,
    stages: Vec<StageRecord>,
    started: Instant,
    stage_started: Option<Instant>,
    budget: Option<f64>,
}

impl Ctx {
    /// Opens a stage, or records it as skipped once the budget is spent.
    fn begin(&mut self, name: &str) -> bool {
        self.end();
        let over = self.budget.is_some_and(|b| self.started.elapsed().as_secs_f64() > b);
        if over {
            self.stages.push(StageRecord { name: name.into(), status: StageStatus::Skipped, seconds: 0.0 });
            return false;
        }
        self.stages.push(StageRecord { name: name.into(), status: StageStatus::Done, seconds: 0.0 });
        self.stage_started = Some(Instant::now());
        true
    }

    fn end(&mut self) {
        if let (Some(t), Some(last)) = (self.stage_started.take(), self.stages.last_mut()) {
            last.seconds = t.elapsed().as_secs_f64();
        }
    }

    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<(), RunError> {
        fs::write(self.dir.join(name), &bytes)?;
        self.files.push(FileEntry {
            path: name.into(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, bytes)
    }

    /// Writes a CSV produced by `fill` into an in-memory buffer first.
    fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<(), RunError>) -> Result<(), RunError> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, buf)
    }

    fn rows(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
        self.csv(name, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
            Ok(())
        })
    }
}

fn e(x: f64) -> String {
    format!("{x:e}")
}

/// Executes a validated configuration and writes its artifacts and
/// `manifest.json`. A failing stage still leaves a non-final manifest
/// listing every file written before the failure.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest, RunError> {
    config.validate()?;
    let dir = opts
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| field_err("output_dir", "no output directory given"))?;
    fs::create_dir_all(&dir)?;
    let workers = resolve_workers(opts.workers, config.workers);
    let mut ctx = Ctx {
        dir: dir.clone(),
        files: Vec::new(),
        stages: Vec::new(),
        started: Instant::now(),
        stage_started: None,
        budget: config.max_wall_seconds,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| field_err("workers", e.to_string()))?;
    let result = pool.install(|| execute(config, &mut ctx));
    ctx.end();
    let skipped = ctx.stages.iter().any(|s| s.status == StageStatus::Skipped);
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        crate_name: env!("CARGO_PKG_NAME").into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        kind: config.experiment.kind().into(),
        config: config.clone(),
        workers,
        wall_clock_seconds: ctx.started.elapsed().as_secs_f64(),
        is_final: result.is_ok() && !skipped,
        error: result.as_ref().err().map(|e| e.to_string()),
        stages: ctx.stages,
        files: ctx.files,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(dir.join("manifest.json"), bytes)?;
    result.map(|_| manifest)
}

fn execute(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), RunError> {
    let seed = config.seed;
    match &config.experiment {
        Experiment::RvCheck(c) => run_rv(c, ctx),
        Experiment::TowerVerify(c) => run_tower(c, seed, ctx),
        Experiment::FallingBalls(c) => {
            let sys = PhysicalSystem::FallingBalls { system: c.system };
            run_tail(&sys, &c.run, seed, ctx, "")
        }
        Experiment::Flowers(c) => {
            let sys = PhysicalSystem::Flowers { table: c.table.clone(), selector: c.selector };
            run_tail(&sys, &c.run, seed, ctx, "")
        }
        Experiment::FlatPoints(c) => run_flat(c, seed, ctx),
        Experiment::CurvesDiagnostics(c) => run_curves(c, seed, ctx),
        Experiment::Correlation(c) => run_correlation(c, seed, ctx),
    }
}

fn run_rv(c: &RvCheckConfig, ctx: &mut Ctx) -> Result<(), RunError> {
    let r = regvar("experiment.tail", &c.tail)?;
    if !ctx.begin("index") {
        return Ok(());
    }
    let (lo, hi) = c.window;
    let step = (hi / lo).ln() / (c.grid_points - 1) as f64;
    let xs: Vec<f64> = (0..c.grid_points).map(|i| lo * (step * i as f64).exp()).collect();
    let samples = xs.iter().map(|&x| Ok((x, r.evaluate(x)?))).collect::<Result<Vec<_>, RvError>>()?;
    ctx.rows("rv_values.csv", &["x", "value"], &samples.iter().map(|(x, v)| vec![e(*x), e(*v)]).collect::<Vec<_>>())?;
    let index = rv::estimate_index(&samples, c.window)?;
    let ratio = rv::ratio_limit_check(&r, c.lambda, &xs, 1e-2)?;
    if !ctx.begin("tail-sums") {
        ctx.json(
            "rv_report.json",
            &json!({ "declared_index": r.alpha(), "index": index, "window": c.window, "ratio": ratio }),
        )?;
        return Ok(());
    }
    let mut sums = Vec::new();
    for &n in &c.tail_sum_ns {
        let ts = rv::tail_sum_and_integral(&r, n, rv::TailSumOptions::default())?;
        let rn = r.evaluate(n as f64)?;
        let sandwich = ts.integral <= ts.sum && ts.sum <= ts.integral + rn;
        sums.push(json!({ "n": n, "tail_sum": ts, "r_n": rn, "sandwich": sandwich }));
    }
    ctx.json(
        "rv_report.json",
        &json!({ "declared_index": r.alpha(), "index": index, "window": c.window, "ratio": ratio, "tail_sums": sums }),
    )
}

fn run_tower(c: &TowerVerifyConfig, seed: u64, ctx: &mut Ctx) -> Result<(), RunError> {
    if !ctx.begin("model") {
        return Ok(());
    }
    let model = c.model.build(seed, "experiment.model")?;
    ctx.write("model.json", model.to_json().into_bytes())?;
    if !ctx.begin("exact-tails") {
        return Ok(());
    }
    let tails = tower::exact_tails(&model, c.n_max);
    for (name, curve) in [("tail_d.csv", &tails.d), ("tail_h.csv", &tails.h), ("tail_a.csv", &tails.a)] {
        ctx.csv(name, |b| Ok(curve.write_csv(b)?))?;
    }
    let rows: Vec<Vec<String>> = tails
        .a
        .entries
        .iter()
        .zip(&tails.h.entries)
        .filter(|(_, h)| h.survival > 0.0)
        .map(|(a, h)| vec![a.n.to_string(), e(a.survival), e(h.survival), e(a.survival / h.survival)])
        .collect();
    ctx.rows("ratio_a_over_h.csv", &["n", "A", "H", "ratio"], &rows)?;
    let reference = match (&c.reference, c.model.tail()) {
        (Some(r), _) | (None, Some(r)) => Some(regvar("experiment.reference", r)?),
        _ => None,
    };
    if let Some(r) = reference {
        if !ctx.begin("transfer") {
            return Ok(());
        }
        let opts = MainOptions { window: c.window, ..Default::default() };
        let report = tower::verify_main_theorem(&model, &r, c.n_max, c.lower_exponent, &opts)?;
        ctx.json("main_report.json", &report)?;
    }
    if let Some(h) = &c.hat {
        if !ctx.begin("hat-ratio") {
            return Ok(());
        }
        let hat = tower::hat_ratio(&model, h.b, h.q, &h.ks, HatOptions { seed, ..Default::default() })?;
        ctx.json("hat_ratio.json", &hat)?;
    }
    if let Some(steps) = c.monte_carlo_steps {
        if !ctx.begin("monte-carlo") {
            return Ok(());
        }
        let mc = tower::simulate_tower(&model, steps, seed);
        for (name, curve) in [("mc_tail_d.csv", &mc.d), ("mc_tail_h.csv", &mc.h), ("mc_tail_a.csv", &mc.a)] {
            ctx.csv(name, |b| Ok(curve.write_csv(b)?))?;
        }
        ctx.json(
            "mc_summary.json",
            &json!({ "steps": mc.steps, "base_returns": mc.base_returns, "h_bar": model.h_bar() }),
        )?;
    }
    Ok(())
}

/// Histogram run with its index fit; `suffix` distinguishes repeated runs.
fn tail_stage(
    sys: &PhysicalSystem,
    run: &TailRunConfig,
    seed: u64,
    ctx: &mut Ctx,
    suffix: &str,
) -> Result<Value, RunError> {
    let system = sys.build("experiment")?;
    let opts = StreamOptions {
        n_events: run.n_events,
        burn_in: run.burn_in.unwrap_or_else(|| sys.default_burn_in()),
        seed,
        workers: 0,
    };
    let hist = return_histogram(&system, &opts, run.max_r)?;
    let tail = hist.tail();
    ctx.csv(&format!("tail{suffix}.csv"), |b| Ok(tail.write_csv(b)?))?;
    let (lo, hi) = run.fit_window;
    let fit = tail.fit_index(lo, hi).ok();
    if run.records {
        let stream = first_return_stream(&system, &opts)?;
        ctx.csv(&format!("returns{suffix}.csv"), |b| Ok(stream.write_csv(b)?))?;
    }
    Ok(json!({
        "alpha": fit.map(|f| f.alpha),
        "stderr": fit.map(|f| f.stderr),
        "points": fit.map(|f| f.points),
        "fit_window": run.fit_window,
        "reference_alpha": sys.reference_alpha(),
        "events": hist.quality.events,
        "returns": hist.total(),
        "overflow": hist.overflow,
        "kac": hist.kac,
        "quality": hist.quality,
    }))
}

fn run_tail(sys: &PhysicalSystem, run: &TailRunConfig, seed: u64, ctx: &mut Ctx, suffix: &str) -> Result<(), RunError> {
    if !ctx.begin("tail") {
        return Ok(());
    }
    let fit = tail_stage(sys, run, seed, ctx, suffix)?;
    ctx.json(&format!("tail_fit{suffix}.json"), &fit)
}

fn run_flat(c: &FlatPointsConfig, seed: u64, ctx: &mut Ctx) -> Result<(), RunError> {
    let radius = c.radius.unwrap_or_else(|| c.table.default_radius());
    let full = PhysicalSystem::FlatPoints { table: c.table, radius: Some(radius) };
    if !ctx.begin("tail") {
        return Ok(());
    }
    let mut fit = tail_stage(&full, &c.run, seed, ctx, "")?;
    fit["radius"] = json!(radius);
    if c.halving_check && ctx.begin("tail-half-radius") {
        let half = PhysicalSystem::FlatPoints { table: c.table, radius: Some(0.5 * radius) };
        let mut h = tail_stage(&half, &c.run, seed, ctx, "_half_radius")?;
        h["radius"] = json!(0.5 * radius);
        let shift = match (fit["alpha"].as_f64(), h["alpha"].as_f64()) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        fit["half_radius"] = h;
        fit["halving_shift"] = json!(shift);
    }
    ctx.json("tail_fit.json", &fit)
}

fn run_curves(c: &CurvesConfig, seed: u64, ctx: &mut Ctx) -> Result<(), RunError> {
    let system = c.system.build("experiment.system")?;
    if !ctx.begin("sample") {
        return Ok(());
    }
    let mut levels: Vec<u64> = c.ks.clone();
    if let Some(fs) = &c.first_step {
        levels.extend(&fs.ks);
    }
    if let Some(g) = &c.growth {
        levels.push(g.k);
    }
    levels.sort_unstable();
    levels.dedup();
    let opts = StreamOptions { n_events: c.n_events, burn_in: c.system.default_burn_in(), seed, workers: 0 };
    let wanted = levels.clone();
    let (samples, quality) = sample_returns(&system, &opts, move |r| r >= 1 && wanted.contains(&(r - 1)), c.per_level)?;
    let map = SectionReturn::new(&system);
    let mut report = ConditionReport::new(c.system_label());
    let mut summary = json!({ "samples": samples.len(), "quality": quality });

    if !ctx.begin("widths") {
        return finish_curves(ctx, summary, &report);
    }
    let law = unstable_width_law(&map, &samples, &c.ks, &c.width)?;
    let rows: Vec<Vec<String>> = law
        .entries
        .iter()
        .map(|w| vec![w.k.to_string(), e(w.max_width), e(w.upper_width), e(w.median_width), w.count.to_string()])
        .collect();
    ctx.rows("widths.csv", &["k", "max_width", "upper_width", "median_width", "count"], &rows)?;
    ctx.json("width_law.json", &law)?;
    summary["t"] = json!(law.t);
    summary["t_stderr"] = json!(law.t_stderr);
    report.set("C4", ConditionStatus::Pass, &[("t", law.t), ("t_stderr", law.t_stderr)], "upper-quantile width fit");

    if let Some(fs) = &c.first_step {
        if !ctx.begin("first-step") {
            return finish_curves(ctx, summary, &report);
        }
        let mut points = Vec::new();
        let mut rows = Vec::new();
        for &k in &fs.ks {
            let Ok(fam) = level_family(&map, &samples, k, &c.width, c.points) else {
                continue;
            };
            let z0 = z_function(&fam, None).z;
            let pushed = push_forward(&fam, &map, &PushOptions::default())?;
            let z1 = z_function(&pushed.family, None).z;
            rows.push(vec![
                k.to_string(),
                fam.len().to_string(),
                e(z0),
                e(z1),
                e(pushed.leakage),
                pushed.cuts.to_string(),
            ]);
            points.push((k, z1));
        }
        ctx.rows("z1.csv", &["k", "curves", "z0", "z1", "leakage", "cuts"], &rows)?;
        let t = fs.t.unwrap_or(law.t);
        let step = first_step_check(&points, t)?;
        summary["implied_p"] = json!(step.implied_p);
        ctx.json("first_step.json", &step)?;
        if let Some(p) = c.declared_p {
            let ok = law.t >= p && p > 1.0;
            let status = if ok { ConditionStatus::Pass } else { ConditionStatus::Fail };
            report.set("C5", status, &[("t", law.t), ("p", p), ("implied_p", step.implied_p)], "declared p, fitted t");
        }
    }

    if let Some(g) = &c.growth {
        if !ctx.begin("growth") {
            return finish_curves(ctx, summary, &report);
        }
        let fam = level_family(&map, &samples, g.k, &c.width, c.points)?;
        ctx.csv(&format!("family_k{}.csv", g.k), |b| Ok(fam.write_csv(b)?))?;
        let growth = growth_lemma_check(&fam, &map, g.steps, &PushOptions::default())?;
        let rows: Vec<Vec<String>> = growth
            .z
            .iter()
            .zip(&growth.leakage)
            .enumerate()
            .map(|(m, (z, l))| vec![m.to_string(), e(*z), e(*l)])
            .collect();
        ctx.rows("z_growth.csv", &["m", "z", "leakage"], &rows)?;
        ctx.json("growth.json", &growth)?;
        let status = if growth.passed { ConditionStatus::Pass } else { ConditionStatus::Fail };
        report.set("C3", status, &[("theta", growth.theta), ("bound", growth.bound)], "growth fit on a level family");
    }
    finish_curves(ctx, summary, &report)
}

fn finish_curves(ctx: &mut Ctx, summary: Value, report: &ConditionReport) -> Result<(), RunError> {
    ctx.write("condition_report.json", format!("{}\n", report.to_json()?).into_bytes())?;
    ctx.json("curves_summary.json", &summary)
}

impl CurvesConfig {
    fn system_label(&self) -> &'static str {
        match self.system {
            PhysicalSystem::FallingBalls { .. } => "falling-balls",
            PhysicalSystem::Flowers { .. } => "flowers",
            PhysicalSystem::FlatPoints { .. } => "flat-points",
        }
    }
}

/// Builds the observable of a physical correlation run.
pub fn physical_observable(
    spec: &ObservableSpec,
    system: &System,
    seed: u64,
    burn_in: u64,
) -> Result<Observable, RunError> {
    Ok(match spec {
        ObservableSpec::Indicator => Observable::new("fast indicator", Support::Fast, 1.0, 1.0, |_| 1.0),
        ObservableSpec::Coordinate { index, pilot_events } => {
            let i = *index;
            let raw = Observable::new(format!("x[{i}]"), Support::Fast, 1.0, 1.0, move |x| x[i]);
            let ind = Observable::new("fast indicator", Support::Fast, 1.0, 1.0, |_| 1.0);
            let pilot_opts =
                StreamOptions { n_events: *pilot_events, burn_in, seed: crate::seed::splitmix64(seed), workers: 0 };
            let pilot =
                observe(system, &raw, &ind, &[0], (*pilot_events / SHARDS as u64).max(10), u64::MAX, &pilot_opts)?;
            let m = if pilot.mean_g > 0.0 { pilot.mean_f / pilot.mean_g } else { 0.0 };
            Observable::new(format!("x[{i}] - {m:e} on the fast subset"), Support::Fast, 1.0, 1.0, move |x| x[i] - m)
        }
        ObservableSpec::Bump { center, radius, height, fast_only } => {
            let support = if *fast_only { Support::Fast } else { Support::Full };
            Observable::bump(center.clone(), *radius, *height, support)
        }
    })
}

fn slope_fit(curve: &crate::estat::CorrelationCurve, range: (u64, u64)) -> Option<fit::LineFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve
        .lags
        .iter()
        .zip(&curve.estimates)
        .filter(|(l, c)| **l >= range.0 && **l <= range.1 && c.abs() > 0.0)
        .map(|(l, c)| (*l as f64, c.abs()))
        .unzip();
    fit::loglog(&xs, &ys).ok()
}

fn run_correlation(c: &CorrelationConfig, seed: u64, ctx: &mut Ctx) -> Result<(), RunError> {
    if !ctx.begin("correlation") {
        return Ok(());
    }
    let lags: Vec<u64> = (0..=c.max_lag).collect();
    let mut report = json!({ "fit_range": c.fit_range });
    let curve = match &c.source {
        CorrelationSource::Tower { model, steps } => {
            let model = model.build(seed, "experiment.source.model")?;
            let ind = |p: &tower::TowerPoint| f64::from(u8::from(p.on_base()));
            let batch_len = steps / SHARDS as u64 / c.batches;
            let (curve, mean_f, mean_g) = tower::observe_tower(&model, ind, ind, &lags, batch_len, *steps, seed)?;
            ctx.csv("correlation.csv", |b| Ok(curve.write_csv(b)?))?;
            let n_max = (model.max_height() + 1).max(c.max_lag + 1);
            let tails = tower::exact_tails(&model, n_max);
            let exact = tower::base_indicator_correlation(&model, c.max_lag as usize);
            let hb = model.h_bar();
            let mut rows = Vec::new();
            let mut ratios = Vec::new();
            for (i, &n) in curve.lags.iter().enumerate() {
                let pred = predicted_correlation(TailSource::Curve(&tails.a), hb, mean_f, mean_g, n)?;
                let ratio = curve.estimates[i] / pred;
                rows.push(vec![n.to_string(), e(pred), e(pred / (hb * hb)), e(exact[n as usize])]);
                if n >= c.fit_range.0 && n <= c.fit_range.1 {
                    ratios.push(json!({ "n": n, "ratio": ratio, "renewal_ratio": ratio * hb * hb }));
                }
            }
            ctx.rows("correlation_predicted.csv", &["n", "predicted", "renewal", "exact"], &rows)?;
            report["mean_f"] = json!(mean_f);
            report["mean_g"] = json!(mean_g);
            report["h_bar"] = json!(hb);
            report["ratios"] = json!(ratios);
            curve
        }
        CorrelationSource::Physical { system, n_events } => {
            let sys = system.build("experiment.source.system")?;
            let burn_in = system.default_burn_in();
            let f = physical_observable(&c.observable, &sys, seed, burn_in)?;
            let batch_len = n_events / SHARDS as u64 / c.batches;
            let block_len = c.clt.as_ref().map_or(u64::MAX, |b| b.block_len);
            let opts = StreamOptions { n_events: *n_events, burn_in, seed, workers: 0 };
            let run = observe(&sys, &f, &f, &lags, batch_len, block_len, &opts)?;
            ctx.csv("correlation.csv", |b| Ok(run.correlation.write_csv(b)?))?;
            report["mean_f"] = json!(run.mean_f);
            report["observable"] = json!(f.name);
            report["quality"] = json!(run.quality);
            if let Some(fit) = slope_fit(&run.correlation, c.fit_range) {
                // Reference n^-2 line through the fitted value at the start of the range.
                let n0 = c.fit_range.0 as f64;
                let c0 = (fit.intercept + fit.slope * n0.ln()).exp();
                let rows: Vec<Vec<String>> = lags
                    .iter()
                    .filter(|&&n| n > 0)
                    .map(|&n| vec![n.to_string(), e(c0 * (n as f64 / n0).powi(-2))])
                    .collect();
                ctx.rows("correlation_predicted.csv", &["n", "reference"], &rows)?;
            }
            if let Some(clt) = &c.clt {
                if ctx.begin("clt") {
                    let gk = green_kubo_variance(&run.correlation, run.mean_f)?;
                    let diag = clt_diagnostic(&run.block_sums, clt.block_len)?;
                    let blocks = run.block_sums.len() as u64;
                    let rows: Vec<Vec<String>> = diag
                        .variance_ratio
                        .iter()
                        .map(|(len, v)| {
                            let agg = blocks / (len / clt.block_len);
                            vec![len.to_string(), e(*v), e(gk.c2), agg.to_string()]
                        })
                        .collect();
                    ctx.rows("clt_variance.csv", &["n", "var_over_n", "green_kubo", "blocks"], &rows)?;
                    report["green_kubo"] = json!(gk);
                    report["clt"] = json!(diag);
                }
            }
            run.correlation
        }
    };
    if let Some(curve_fit) = slope_fit(&curve, c.fit_range) {
        report["slope"] = json!(curve_fit.slope);
        report["slope_stderr"] = json!(curve_fit.slope_stderr);
    }
    ctx.json("correlation_fit.json", &report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_field_is_named() {
        let err = parse_config(r#"{"experiment": {"kind": "falling-balls", "run": {"n_events": 10, "evnts": 3}}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("experiment.run"), "{err}");
        assert!(err.contains("evnts"), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let err = parse_config(r#"{"experiment": {"kind": "flowers", "run": {}}}"#).unwrap_err().to_string();
        assert!(err.contains("n_events"), "{err}");
    }

    #[test]
    fn zero_budget_rejected() {
        let c = parse_config(r#"{"experiment": {"kind": "falling-balls", "run": {"n_events": 0}}}"#).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("experiment.run.n_events"), "{err}");
    }

    #[test]
    fn invalid_table_rejected() {
        let c =
            parse_config(r#"{"experiment": {"kind": "flat-points", "table": {"beta": 1.5}, "run": {"n_events": 5}}}"#)
                .unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("experiment.table"), "{err}");
    }

    #[test]
    fn worker_resolution_order() {
        assert_eq!(resolve_workers(Some(3), Some(2)), 3);
        assert_eq!(resolve_workers(None, Some(2)), 2);
    }

    #[test]
    fn config_round_trip() {
        let text = r#"{"experiment": {"kind": "tower-verify", "model": {"source": "synthetic",
            "tail": {"index": 3.0}, "rho": 0.5, "n_cells": 100}, "n_max": 1000}, "seed": 4}"#;
        let c = parse_config(text).unwrap();
        let back = parse_config(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
