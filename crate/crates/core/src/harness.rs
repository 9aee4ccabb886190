//! Experiment pipelines behind the command-line interface.
//!
//! Every pipeline is driven by one flat [`ExperimentConfig`] and writes CSV
//! files whose leading `#` lines record the config hash, the seed and the
//! source revision. The rows below those lines depend only on the config,
//! except for columns that hold wall-clock measurements.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{wmmse_allocate, Baseline, WmmseConfig};
use crate::gnn::{
    self, sha256_hex, EpochLog, FeatureEncoding, FeatureScaler, GnnError, GnnModel, ModelConfig, TimingConfig,
    TrainConfig,
};
use crate::graph::build_graph;
use crate::metrics::{normalized_performance, weighted_sum_rate, ResultRow};
use crate::netsim::{generate_dataset, NetsimError, NetworkInstance, ScenarioConfig, WeightMode};
use crate::nn::AdamConfig;
use crate::quad::{self, Tolerance};
use crate::stochgeo::{self, PppParams, StochGeoError, ThresholdSpec};

/// Source revision baked in at build time.
pub const GIT_DESCRIBE: &str = env!("PRUNEGNN_GIT_DESCRIBE");

/// Test instances are drawn from indices far past any training index.
pub const TEST_INDEX_OFFSET: u64 = 1 << 40;

pub const ALPHA_GRID: [f64; 6] = [3.0, 3.5, 4.0, 4.5, 5.0, 5.5];
pub const INTENSITY_GRID: [f64; 5] = [0.002, 0.004, 0.01, 0.02, 0.03];
pub const RATIO_GRID: [f64; 3] = [0.90, 0.95, 0.98];

/// Reference distance thresholds (metres); rows follow [`RATIO_GRID`],
/// columns [`ALPHA_GRID`].
pub const REFERENCE_DISTANCE_TABLE: [[f64; 6]; 3] =
    [[7.0, 4.0, 3.0, 2.0, 2.0, 2.0], [12.0, 6.0, 4.0, 3.0, 2.0, 2.0], [26.0, 10.0, 5.0, 4.0, 3.0, 3.0]];

/// Reference neighbour counts at a 95% ratio; rows follow [`INTENSITY_GRID`].
pub const REFERENCE_NEIGHBOUR_TABLE: [[usize; 6]; 5] =
    [[2, 1, 1, 1, 1, 1], [3, 2, 1, 1, 1, 1], [5, 2, 2, 1, 1, 1], [9, 3, 2, 2, 2, 2], [13, 4, 2, 2, 2, 2]];

/// Reference interference variances under the 95% distance rule.
pub const REFERENCE_VARIANCE_DISTANCE: [[f64; 6]; 5] = [
    [3.07, 10.01, 13.93, 25.33, 150.20, 163.76],
    [0.97, 1.99, 2.83, 5.52, 21.05, 23.12],
    [0.25, 0.39, 0.50, 0.34, 1.48, 2.47],
    [0.10, 0.19, 0.19, 0.22, 0.46, 0.98],
    [0.06, 0.12, 0.12, 0.14, 0.28, 0.58],
];

/// Reference interference variances under the 95% neighbour rule.
pub const REFERENCE_VARIANCE_NEIGHBOUR: [[f64; 6]; 5] = [
    [2.71, 4.81, 2.74, 2.41, 1.63, 1.55],
    [1.02, 0.42, 2.21, 2.78, 2.33, 2.29],
    [0.37, 0.41, 0.04, 3.34, 3.01, 2.97],
    [0.15, 0.18, 0.08, 0.13, 0.06, 0.06],
    [0.09, 0.12, 0.09, 0.21, 0.11, 0.11],
];

/// Distance-table cells, as (ratio, α), where the closed form is known to
/// disagree with the reference value.
pub const DOCUMENTED_DISTANCE_DISCREPANCIES: [(f64, f64); 2] = [(0.95, 3.0), (0.98, 3.0)];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    StochGeo(#[from] StochGeoError),
    #[error(transparent)]
    Netsim(#[from] NetsimError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// `auto` resolves through the stochastic-geometry solvers; anything else
/// is a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ThresholdPolicy {
    Auto,
    Fixed(f64),
}

impl TryFrom<String> for ThresholdPolicy {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(ThresholdPolicy::Auto);
        }
        s.trim()
            .parse::<f64>()
            .map(ThresholdPolicy::Fixed)
            .map_err(|_| format!("threshold policy must be \"auto\" or a number, got {s:?}"))
    }
}

impl From<ThresholdPolicy> for String {
    fn from(p: ThresholdPolicy) -> String {
        match p {
            ThresholdPolicy::Auto => "auto".into(),
            ThresholdPolicy::Fixed(v) => v.to_string(),
        }
    }
}

/// GNN variants distinguished by their pruning rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GnnVariant {
    #[serde(rename = "n-gnn")]
    Neighbour,
    #[serde(rename = "d-gnn")]
    Distance,
    #[serde(rename = "complete-gnn")]
    Complete,
}

impl GnnVariant {
    pub fn name(self) -> &'static str {
        match self {
            GnnVariant::Neighbour => "n-gnn",
            GnnVariant::Distance => "d-gnn",
            GnnVariant::Complete => "complete-gnn",
        }
    }
}

impl FromStr for GnnVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "n-gnn" => Ok(GnnVariant::Neighbour),
            "d-gnn" => Ok(GnnVariant::Distance),
            "complete-gnn" | "complete" => Ok(GnnVariant::Complete),
            other => Err(format!("unknown model {other:?}; expected n-gnn, d-gnn or complete-gnn")),
        }
    }
}

/// All experiment settings in one flat document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub pairs: Option<usize>,
    pub intensity: Option<f64>,
    pub region_side: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub alpha: f64,
    pub d0: f64,
    pub noise: f64,
    pub p_max: f64,
    pub weight_mode: WeightMode,

    pub target_ratio: f64,
    pub neighbour_threshold: ThresholdPolicy,
    pub distance_threshold: ThresholdPolicy,
    pub models: Vec<GnnVariant>,
    pub baselines: Vec<Baseline>,

    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub layers: usize,
    pub encoding: FeatureEncoding,

    pub wmmse_max_iters: usize,
    pub wmmse_tolerance: f64,

    pub variance_trials: usize,
    pub variance_region_side: f64,

    pub figure_intensity: f64,
    pub figure_pairs: Vec<usize>,

    pub timing_pairs: Vec<usize>,
    pub timing_alpha: f64,
    pub timing_repeats: usize,
    pub timing_warmup: usize,

    pub distribution_pairs: usize,
    pub distribution_intensity: f64,
    pub distance_ranges: Vec<[f64; 2]>,

    pub generalisation_samples: usize,
    pub size_intensity: f64,
    pub size_train_pairs: usize,
    pub size_eval_pairs: Vec<usize>,
    pub density_region_side: f64,
    pub density_train_pairs: usize,
    pub density_eval_pairs: Vec<usize>,

    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        Self {
            seed: 1,
            pairs: s.pairs,
            intensity: s.intensity,
            region_side: s.region_side,
            d_min: s.d_min,
            d_max: s.d_max,
            alpha: s.alpha,
            d0: s.d0,
            noise: s.noise,
            p_max: s.p_max,
            weight_mode: s.weight_mode,
            target_ratio: 0.95,
            neighbour_threshold: ThresholdPolicy::Auto,
            distance_threshold: ThresholdPolicy::Auto,
            models: vec![GnnVariant::Neighbour, GnnVariant::Distance, GnnVariant::Complete],
            baselines: Baseline::ALL.to_vec(),
            train_samples: 2000,
            test_samples: 500,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            layers: 3,
            encoding: FeatureEncoding::Gain,
            wmmse_max_iters: 100,
            wmmse_tolerance: 1e-6,
            variance_trials: 5000,
            variance_region_side: 100.0,
            figure_intensity: 0.01,
            figure_pairs: vec![20, 40],
            timing_pairs: vec![50, 100, 200, 400],
            timing_alpha: 5.5,
            timing_repeats: 20,
            timing_warmup: 2,
            distribution_pairs: 40,
            distribution_intensity: 0.004,
            distance_ranges: vec![[2.0, 20.0], [5.0, 5.0], [5.0, 15.0], [10.0, 30.0]],
            generalisation_samples: 200,
            size_intensity: 0.004,
            size_train_pairs: 40,
            size_eval_pairs: vec![10, 40, 160],
            density_region_side: 100.0,
            density_train_pairs: 40,
            density_eval_pairs: vec![20, 40, 80, 160],
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Sample sizes and grids at full experimental scale.
    pub fn paper_scale() -> Self {
        Self {
            train_samples: 10_000,
            test_samples: 2000,
            generalisation_samples: 2000,
            figure_pairs: vec![20, 40, 100, 200, 300],
            size_eval_pairs: vec![10, 40, 160, 360, 640],
            density_train_pairs: 100,
            density_eval_pairs: vec![20, 40, 200, 300, 400],
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Hash of every setting except `output_dir`, which does not affect results.
    pub fn hash(&self) -> String {
        let canonical = Self { output_dir: PathBuf::new(), ..self.clone() };
        sha256_hex(serde_json::to_string(&canonical).expect("config serialises").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario().validate()?;
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if !(self.target_ratio > 0.0 && self.target_ratio < 1.0) {
            return bad("target_ratio must lie in (0, 1)");
        }
        if self.train_samples == 0 || self.test_samples == 0 || self.batch_size == 0 {
            return bad("train_samples, test_samples and batch_size must be positive");
        }
        if self.layers == 0 || !(self.learning_rate > 0.0) {
            return bad("layers and learning_rate must be positive");
        }
        if self.wmmse_max_iters == 0 || !(self.wmmse_tolerance > 0.0) {
            return bad("wmmse_max_iters must be >= 1 and wmmse_tolerance > 0");
        }
        if let ThresholdPolicy::Fixed(n) = self.neighbour_threshold {
            if !(n >= 1.0 && n.fract() == 0.0) {
                return bad("a fixed neighbour_threshold must be a positive integer");
            }
        }
        if let ThresholdPolicy::Fixed(t) = self.distance_threshold {
            if !(t >= self.d0) {
                return bad("a fixed distance_threshold must be at least d0");
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            pairs: self.pairs,
            intensity: self.intensity,
            region_side: self.region_side,
            d_min: self.d_min,
            d_max: self.d_max,
            alpha: self.alpha,
            d0: self.d0,
            noise: self.noise,
            p_max: self.p_max,
            weight_mode: self.weight_mode,
            seed: self.seed,
        }
    }

    /// The base scenario with `pairs` pairs on a `side × side` region.
    pub fn scenario_with(&self, pairs: usize, side: f64) -> ScenarioConfig {
        ScenarioConfig { pairs: Some(pairs), intensity: None, region_side: side, ..self.scenario() }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { layers: self.layers, encoding: self.encoding, ..ModelConfig::default() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig { lr: self.learning_rate, ..AdamConfig::default() },
            seed: self.seed,
        }
    }

    pub fn wmmse_config(&self) -> WmmseConfig {
        WmmseConfig { max_iters: self.wmmse_max_iters, tolerance: self.wmmse_tolerance, p_init: None }
    }

    pub fn timing_config(&self) -> TimingConfig {
        TimingConfig { repeats: self.timing_repeats, warmup: self.timing_warmup }
    }

    /// Pruning rule of `variant` for a scenario; `auto` policies call the
    /// solvers with the scenario's own density and exponent.
    pub fn resolve_spec(&self, variant: GnnVariant, scenario: &ScenarioConfig) -> Result<ThresholdSpec> {
        let ppp = || PppParams::new(scenario.effective_intensity(), scenario.alpha, scenario.d0);
        Ok(match variant {
            GnnVariant::Complete => ThresholdSpec::Complete,
            GnnVariant::Neighbour => match self.neighbour_threshold {
                ThresholdPolicy::Auto => stochgeo::solve_neighbour_threshold(&ppp()?, self.target_ratio)?.spec,
                ThresholdPolicy::Fixed(n) => ThresholdSpec::Neighbour { n: n as usize },
            },
            GnnVariant::Distance => match self.distance_threshold {
                ThresholdPolicy::Auto => stochgeo::solve_distance_threshold(&ppp()?, self.target_ratio)?.spec,
                ThresholdPolicy::Fixed(t) => ThresholdSpec::Distance { t },
            },
        })
    }
}

/// Comment lines that lead every CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvMeta {
    pub config_hash: String,
    pub seed: u64,
    pub git_describe: String,
}

impl CsvMeta {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Self { config_hash: cfg.hash(), seed: cfg.seed, git_describe: GIT_DESCRIBE.to_string() }
    }
}

/// A header and string rows, written after the `#` metadata lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path, meta: &CsvMeta) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut bytes =
            format!("# config_hash: {}\n# seed: {}\n# git: {}\n", meta.config_hash, meta.seed, meta.git_describe)
                .into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut bytes);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        fs::write(path, bytes)?;
        Ok(())
    }
}

/// Lines of a CSV file that are not `#` comments.
pub fn csv_body(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Match,
    Mismatch,
    DocumentedDiscrepancy,
    NoReference,
    RouteDisagreement,
    Error,
}

impl CellStatus {
    fn name(self) -> &'static str {
        match self {
            CellStatus::Match => "match",
            CellStatus::Mismatch => "mismatch",
            CellStatus::DocumentedDiscrepancy => "documented_discrepancy",
            CellStatus::NoReference => "no_reference",
            CellStatus::RouteDisagreement => "route_disagreement",
            CellStatus::Error => "error",
        }
    }
}

/// One solver answer with its independent cross-check.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCell {
    /// Target ratio in the distance table, intensity in the neighbour table.
    pub row: f64,
    pub alpha: f64,
    pub value: Option<f64>,
    pub achieved_ratio: Option<f64>,
    /// Same threshold found by quadrature in place of the closed form.
    pub quadrature_value: Option<f64>,
    pub reference: Option<f64>,
    pub status: CellStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTables {
    pub ratios: Vec<f64>,
    pub alphas: Vec<f64>,
    pub intensities: Vec<f64>,
    pub neighbour_ratio: f64,
    pub distance: Vec<ThresholdCell>,
    pub neighbour: Vec<ThresholdCell>,
}

fn grid_index(grid: &[f64], v: f64) -> Option<usize> {
    grid.iter().position(|&g| (g - v).abs() < 1e-12)
}

fn reference_distance(ratio: f64, alpha: f64) -> Option<f64> {
    Some(REFERENCE_DISTANCE_TABLE[grid_index(&RATIO_GRID, ratio)?][grid_index(&ALPHA_GRID, alpha)?])
}

fn reference_neighbour(intensity: f64, alpha: f64, ratio: f64) -> Option<f64> {
    if (ratio - 0.95).abs() > 1e-12 {
        return None;
    }
    Some(REFERENCE_NEIGHBOUR_TABLE[grid_index(&INTENSITY_GRID, intensity)?][grid_index(&ALPHA_GRID, alpha)?] as f64)
}

fn quad_tolerance() -> Tolerance {
    Tolerance { abs: 1e-13, rel: 1e-12, max_intervals: 20_000 }
}

/// Smallest integer t ≥ d0 whose quadrature-evaluated capture reaches the target.
fn distance_threshold_by_quadrature(p: &PppParams, target: f64) -> Result<f64> {
    let total = stochgeo::total_interference_quadrature(p)?;
    let lam = p.intensity();
    let density = |r: f64| lam * 2.0 * std::f64::consts::PI * r * p.gain(r);
    let disk = quad::integrate(density, 0.0, p.d0(), quad_tolerance()).map_err(StochGeoError::from)?;
    let mut t = p.d0().ceil().max(1.0);
    let cap = 1e7;
    while t <= cap {
        let ring = quad::integrate(density, p.d0(), t, quad_tolerance()).map_err(StochGeoError::from)?;
        if (disk + ring) / total >= target - 1e-12 {
            return Ok(t);
        }
        t += 1.0;
    }
    Err(StochGeoError::IterationCap { cap: cap as usize, last_ratio: f64::NAN }.into())
}

/// Smallest n whose quadrature-evaluated O_n reaches the target.
fn neighbour_threshold_by_quadrature(p: &PppParams, target: f64) -> Result<usize> {
    let total = stochgeo::total_interference_quadrature(p)?;
    let mut captured = 0.0;
    for n in 1..=stochgeo::NEIGHBOUR_ITERATION_CAP {
        captured += stochgeo::nth_neighbour_interference_quadrature(p, n)?;
        if captured / total >= target {
            return Ok(n);
        }
    }
    Err(StochGeoError::IterationCap { cap: stochgeo::NEIGHBOUR_ITERATION_CAP, last_ratio: captured / total }.into())
}

fn judge(value: Option<f64>, quad: Option<f64>, reference: Option<f64>, documented: bool) -> CellStatus {
    match (value, quad, reference) {
        (None, _, _) => CellStatus::Error,
        (Some(v), Some(q), _) if v != q => CellStatus::RouteDisagreement,
        (Some(_), _, None) => CellStatus::NoReference,
        (Some(v), _, Some(r)) if v == r => CellStatus::Match,
        _ if documented => CellStatus::DocumentedDiscrepancy,
        _ => CellStatus::Mismatch,
    }
}

/// Solve the distance table (ratio × α) and the neighbour table (λ × α at
/// `neighbour_ratio`). Solver failures are recorded in their cell.
pub fn run_threshold_tables(
    ratios: &[f64],
    alphas: &[f64],
    intensities: &[f64],
    neighbour_ratio: f64,
    d0: f64,
) -> Result<ThresholdTables> {
    if ratios.is_empty() || alphas.is_empty() || intensities.is_empty() {
        return Err(HarnessError::Usage("ratio, alpha and intensity grids must be non-empty".into()));
    }
    let mut distance = Vec::new();
    for &ratio in ratios {
        for &alpha in alphas {
            // the distance rule does not depend on λ; any positive value works
            let cell = PppParams::new(1.0, alpha, d0).map_err(HarnessError::from).and_then(|p| {
                let sol = stochgeo::solve_distance_threshold(&p, ratio)?;
                let ThresholdSpec::Distance { t } = sol.spec else { unreachable!("distance solver") };
                let q = distance_threshold_by_quadrature(&p, ratio)?;
                Ok((t, sol.achieved_ratio, q))
            });
            let documented = DOCUMENTED_DISTANCE_DISCREPANCIES.iter().any(|&(r, a)| r == ratio && a == alpha);
            let reference = reference_distance(ratio, alpha);
            distance.push(match cell {
                Ok((t, achieved, q)) => ThresholdCell {
                    row: ratio,
                    alpha,
                    value: Some(t),
                    achieved_ratio: Some(achieved),
                    quadrature_value: Some(q),
                    reference,
                    status: judge(Some(t), Some(q), reference, documented),
                    error: None,
                },
                Err(e) => ThresholdCell {
                    row: ratio,
                    alpha,
                    value: None,
                    achieved_ratio: None,
                    quadrature_value: None,
                    reference,
                    status: CellStatus::Error,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    let neighbour = intensities
        .iter()
        .flat_map(|&lam| alphas.iter().map(move |&alpha| (lam, alpha)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(lam, alpha)| {
            let cell = PppParams::new(lam, alpha, d0).map_err(HarnessError::from).and_then(|p| {
                let sol = stochgeo::solve_neighbour_threshold(&p, neighbour_ratio)?;
                let ThresholdSpec::Neighbour { n } = sol.spec else { unreachable!("neighbour solver") };
                let q = neighbour_threshold_by_quadrature(&p, neighbour_ratio)?;
                Ok((n as f64, sol.achieved_ratio, q as f64))
            });
            let reference = reference_neighbour(lam, alpha, neighbour_ratio);
            match cell {
                Ok((n, achieved, q)) => ThresholdCell {
                    row: lam,
                    alpha,
                    value: Some(n),
                    achieved_ratio: Some(achieved),
                    quadrature_value: Some(q),
                    reference,
                    status: judge(Some(n), Some(q), reference, false),
                    error: None,
                },
                Err(e) => ThresholdCell {
                    row: lam,
                    alpha,
                    value: None,
                    achieved_ratio: None,
                    quadrature_value: None,
                    reference,
                    status: CellStatus::Error,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(ThresholdTables {
        ratios: ratios.to_vec(),
        alphas: alphas.to_vec(),
        intensities: intensities.to_vec(),
        neighbour_ratio,
        distance,
        neighbour,
    })
}

fn alpha_header(first: &str, alphas: &[f64]) -> Vec<String> {
    std::iter::once(first.to_string()).chain(alphas.iter().map(|a| format!("alpha={a}"))).collect()
}

fn wide_table(first: &str, rows: &[f64], alphas: &[f64], cells: &[ThresholdCell]) -> CsvTable {
    let mut t = CsvTable { header: alpha_header(first, alphas), rows: Vec::new() };
    for (i, &r) in rows.iter().enumerate() {
        let mut row = vec![r.to_string()];
        row.extend(cells[i * alphas.len()..(i + 1) * alphas.len()].iter().map(|c| fmt_opt(c.value)));
        t.rows.push(row);
    }
    t
}

fn cell_table(first: &str, cells: &[ThresholdCell]) -> CsvTable {
    let mut t = CsvTable::new(&[
        first,
        "alpha",
        "threshold",
        "achieved_ratio",
        "quadrature_threshold",
        "reference",
        "status",
        "error",
    ]);
    for c in cells {
        t.push(vec![
            c.row.to_string(),
            c.alpha.to_string(),
            fmt_opt(c.value),
            fmt_opt(c.achieved_ratio),
            fmt_opt(c.quadrature_value),
            fmt_opt(c.reference),
            c.status.name().to_string(),
            c.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

impl ThresholdTables {
    /// Distance thresholds laid out as ratio rows and α columns.
    pub fn distance_csv(&self) -> CsvTable {
        wide_table("ratio", &self.ratios, &self.alphas, &self.distance)
    }

    pub fn distance_cells_csv(&self) -> CsvTable {
        cell_table("ratio", &self.distance)
    }

    /// Neighbour counts laid out as λ rows and α columns.
    pub fn neighbour_csv(&self) -> CsvTable {
        wide_table("intensity", &self.intensities, &self.alphas, &self.neighbour)
    }

    pub fn neighbour_cells_csv(&self) -> CsvTable {
        cell_table("intensity", &self.neighbour)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCell {
    pub intensity: f64,
    pub alpha: f64,
    pub distance_t: f64,
    pub neighbour_n: usize,
    pub mean_distance: f64,
    pub var_distance: f64,
    pub mean_neighbour: f64,
    pub var_neighbour: f64,
    pub trials: usize,
    pub reference_var_distance: Option<f64>,
    pub reference_var_neighbour: Option<f64>,
}

impl VarianceCell {
    pub fn variance_ratio(&self) -> f64 {
        self.var_distance / self.var_neighbour
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStudy {
    pub cells: Vec<VarianceCell>,
    pub warnings: Vec<String>,
}

/// Monte-Carlo variance of the captured interference under the distance
/// and neighbour thresholds solved at `cfg.target_ratio`, probed at the
/// centre of a `variance_region_side` square.
pub fn run_variance_study(cfg: &ExperimentConfig, intensities: &[f64], alphas: &[f64]) -> Result<VarianceStudy> {
    if intensities.is_empty() || alphas.is_empty() {
        return Err(HarnessError::Usage("intensity and alpha grids must be non-empty".into()));
    }
    let mut warnings = Vec::new();
    if cfg.variance_trials < 2 {
        warnings.push(format!("variance_trials = {}: sample variance is reported as 0", cfg.variance_trials));
    }
    let mut cells = Vec::new();
    for (i, &lam) in intensities.iter().enumerate() {
        for (j, &alpha) in alphas.iter().enumerate() {
            let p = PppParams::new(lam, alpha, cfg.d0)?;
            let dist = stochgeo::solve_distance_threshold(&p, cfg.target_ratio)?.spec;
            let nb = stochgeo::solve_neighbour_threshold(&p, cfg.target_ratio)?.spec;
            // one seed per cell, shared by both rules so they see the same points
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((i * alphas.len() + j) as u64);
            let side = cfg.variance_region_side;
            let sd = stochgeo::monte_carlo_interference_stats(&p, dist, side, cfg.variance_trials, seed)?;
            let sn = stochgeo::monte_carlo_interference_stats(&p, nb, side, cfg.variance_trials, seed)?;
            let (ThresholdSpec::Distance { t }, ThresholdSpec::Neighbour { n }) = (dist, nb) else {
                unreachable!("solver kinds")
            };
            let li = grid_index(&INTENSITY_GRID, lam);
            let ai = grid_index(&ALPHA_GRID, alpha);
            let on_grid = (cfg.target_ratio - 0.95).abs() < 1e-12;
            let refer = |table: &[[f64; 6]; 5]| match (li, ai, on_grid) {
                (Some(a), Some(b), true) => Some(table[a][b]),
                _ => None,
            };
            cells.push(VarianceCell {
                intensity: lam,
                alpha,
                distance_t: t,
                neighbour_n: n,
                mean_distance: sd.mean,
                var_distance: sd.variance,
                mean_neighbour: sn.mean,
                var_neighbour: sn.variance,
                trials: cfg.variance_trials,
                reference_var_distance: refer(&REFERENCE_VARIANCE_DISTANCE),
                reference_var_neighbour: refer(&REFERENCE_VARIANCE_NEIGHBOUR),
            });
        }
    }
    Ok(VarianceStudy { cells, warnings })
}

impl VarianceStudy {
    fn wide(&self, pick: impl Fn(&VarianceCell) -> f64) -> CsvTable {
        let mut alphas: Vec<f64> = Vec::new();
        let mut lams: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !alphas.contains(&c.alpha) {
                alphas.push(c.alpha);
            }
            if !lams.contains(&c.intensity) {
                lams.push(c.intensity);
            }
        }
        let mut t = CsvTable { header: alpha_header("intensity", &alphas), rows: Vec::new() };
        for (i, lam) in lams.iter().enumerate() {
            let mut row = vec![lam.to_string()];
            row.extend(self.cells[i * alphas.len()..(i + 1) * alphas.len()].iter().map(|c| pick(c).to_string()));
            t.rows.push(row);
        }
        t
    }

    pub fn distance_csv(&self) -> CsvTable {
        self.wide(|c| c.var_distance)
    }

    pub fn neighbour_csv(&self) -> CsvTable {
        self.wide(|c| c.var_neighbour)
    }

    pub fn cells_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "intensity",
            "alpha",
            "distance_t",
            "neighbour_n",
            "mean_distance",
            "var_distance",
            "mean_neighbour",
            "var_neighbour",
            "variance_ratio",
            "trials",
            "reference_var_distance",
            "reference_var_neighbour",
        ]);
        for c in &self.cells {
            t.push(vec![
                c.intensity.to_string(),
                c.alpha.to_string(),
                c.distance_t.to_string(),
                c.neighbour_n.to_string(),
                c.mean_distance.to_string(),
                c.var_distance.to_string(),
                c.mean_neighbour.to_string(),
                c.var_neighbour.to_string(),
                c.variance_ratio().to_string(),
                c.trials.to_string(),
                fmt_opt(c.reference_var_distance),
                fmt_opt(c.reference_var_neighbour),
            ]);
        }
        t
    }

    pub fn cell(&self, intensity: f64, alpha: f64) -> Option<&VarianceCell> {
        self.cells.iter().find(|c| c.intensity == intensity && c.alpha == alpha)
    }
}

/// A trained GNN together with the rule it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub variant: GnnVariant,
    pub model: GnnModel,
    pub log: Vec<EpochLog>,
}

/// Fit feature statistics on the training graphs and train one variant.
pub fn train_variant(
    cfg: &ExperimentConfig,
    variant: GnnVariant,
    scenario: &ScenarioConfig,
    train_set: &[NetworkInstance],
    eval_set: Option<&[NetworkInstance]>,
) -> Result<TrainedModel> {
    let spec = cfg.resolve_spec(variant, scenario)?;
    let (model, log) = train_with_spec(cfg, spec, scenario, train_set, eval_set)?;
    Ok(TrainedModel { variant, model, log })
}

/// Train a GNN under an explicit pruning rule.
pub fn train_with_spec(
    cfg: &ExperimentConfig,
    spec: ThresholdSpec,
    scenario: &ScenarioConfig,
    train_set: &[NetworkInstance],
    eval_set: Option<&[NetworkInstance]>,
) -> Result<(GnnModel, Vec<EpochLog>)> {
    let graphs = train_set
        .iter()
        .map(|n| build_graph(n, spec))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(GnnError::from)?;
    let scaler = FeatureScaler::fit(&graphs, cfg.encoding);
    drop(graphs);
    let mut model = GnnModel::new(&cfg.model_config(), scaler, spec, scenario.p_max, cfg.seed)?;
    let log = gnn::train(&mut model, train_set, eval_set, &cfg.train_config())?;
    Ok((model, log))
}

/// Mean of per-instance sum rates and times of one algorithm on a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub spec: Option<ThresholdSpec>,
    pub mean_sum_rate: f64,
    pub normalized: f64,
    pub mean_time_s: f64,
    pub status: String,
    pub rates: Vec<f64>,
    pub times: Vec<f64>,
}

/// Sum rate and time (graph build plus forward) on every instance.
pub fn evaluate_model(model: &GnnModel, spec: ThresholdSpec, test: &[NetworkInstance]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rates = Vec::with_capacity(test.len());
    let mut times = Vec::with_capacity(test.len());
    for net in test {
        let t0 = Instant::now();
        let powers = model.allocate(net, spec)?;
        times.push(t0.elapsed().as_secs_f64());
        rates.push(weighted_sum_rate(net, &powers));
    }
    Ok((rates, times))
}

fn evaluate_baseline(cfg: &ExperimentConfig, b: Baseline, test: &[NetworkInstance]) -> (Vec<f64>, Vec<f64>) {
    let wm = cfg.wmmse_config();
    let out: Vec<(f64, f64)> = test
        .par_iter()
        .enumerate()
        .map(|(i, net)| {
            let r = b.run(net, &wm, cfg.seed.wrapping_add(i as u64));
            (r.weighted_sum_rate, r.inference_time)
        })
        .collect();
    out.into_iter().unzip()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone)]
pub struct PerformanceOutcome {
    pub scenario: ScenarioConfig,
    pub summaries: Vec<AlgorithmSummary>,
    pub models: Vec<TrainedModel>,
}

impl PerformanceOutcome {
    pub fn summary(&self, algorithm: &str) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn normalized(&self, algorithm: &str) -> Option<f64> {
        self.summary(algorithm).filter(|s| s.status == "ok").map(|s| s.normalized)
    }

    /// Per-algorithm means. Contains a wall-clock column.
    pub fn summary_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["algorithm", "spec", "mean_sum_rate", "normalized", "mean_time_s", "status"]);
        for s in &self.summaries {
            t.push(vec![
                s.algorithm.clone(),
                s.spec.map(|x| x.to_string()).unwrap_or_default(),
                s.mean_sum_rate.to_string(),
                s.normalized.to_string(),
                s.mean_time_s.to_string(),
                s.status.clone(),
            ]);
        }
        t
    }

    pub fn instance_rows(&self) -> Vec<ResultRow> {
        let wmmse = self.summary("wmmse");
        let mut rows = Vec::new();
        for s in self.summaries.iter().filter(|s| s.status == "ok") {
            for (i, (&r, &time)) in s.rates.iter().zip(&s.times).enumerate() {
                let normalized = wmmse.and_then(|w| w.rates.get(i)).map(|&w| r / w);
                rows.push(ResultRow {
                    instance_id: i,
                    algorithm: s.algorithm.clone(),
                    sum_rate: r,
                    normalized,
                    time_s: Some(time),
                });
            }
        }
        rows
    }
}

/// Train every configured variant on `scenario` and compare all
/// algorithms on a held-out set, normalised by WMMSE.
pub fn run_performance_experiment(cfg: &ExperimentConfig, scenario: &ScenarioConfig) -> Result<PerformanceOutcome> {
    let train_set = generate_dataset(scenario, 0, cfg.train_samples)?;
    let test_set = generate_dataset(scenario, TEST_INDEX_OFFSET, cfg.test_samples)?;
    let (wmmse_rates, wmmse_times) = evaluate_baseline(cfg, Baseline::Wmmse, &test_set);
    let reference = mean(&wmmse_rates);
    let summarise = |algorithm: &str, spec, rates: Vec<f64>, times: Vec<f64>| -> Result<AlgorithmSummary> {
        Ok(AlgorithmSummary {
            algorithm: algorithm.to_string(),
            spec,
            mean_sum_rate: mean(&rates),
            normalized: normalized_performance(&rates, &wmmse_rates)
                .map_err(|e| HarnessError::Config(format!("normalisation failed: {e}")))?,
            mean_time_s: mean(&times),
            status: "ok".into(),
            rates,
            times,
        })
    };
    let mut summaries = vec![summarise("wmmse", None, wmmse_rates.clone(), wmmse_times)?];
    for &b in cfg.baselines.iter().filter(|&&b| b != Baseline::Wmmse) {
        let (rates, times) = evaluate_baseline(cfg, b, &test_set);
        summaries.push(summarise(b.name(), None, rates, times)?);
    }
    let mut models = Vec::new();
    for &variant in &cfg.models {
        match train_variant(cfg, variant, scenario, &train_set, None) {
            Ok(trained) => {
                let spec = trained.model.spec();
                let (rates, times) = evaluate_model(&trained.model, spec, &test_set)?;
                summaries.push(summarise(variant.name(), Some(spec), rates, times)?);
                models.push(trained);
            }
            Err(HarnessError::Gnn(e @ GnnError::Diverged { .. })) => summaries.push(AlgorithmSummary {
                algorithm: variant.name().into(),
                spec: cfg.resolve_spec(variant, scenario).ok(),
                mean_sum_rate: f64::NAN,
                normalized: f64::NAN,
                mean_time_s: f64::NAN,
                status: format!("diverged: {e}"),
                rates: Vec::new(),
                times: Vec::new(),
            }),
            Err(e) => return Err(e),
        }
    }
    debug_assert!(reference > 0.0);
    Ok(PerformanceOutcome { scenario: scenario.clone(), summaries, models })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralisationRow {
    pub pairs: usize,
    pub region_side: f64,
    pub algorithm: String,
    pub spec: ThresholdSpec,
    pub mean_sum_rate: f64,
    pub normalized: f64,
}

/// Evaluate already trained models, each under its own training rule, on
/// other scenarios. Rows follow scenario order, then model order.
pub fn run_generalisation(
    cfg: &ExperimentConfig,
    models: &[TrainedModel],
    scenarios: &[ScenarioConfig],
) -> Result<Vec<GeneralisationRow>> {
    let mut rows = Vec::new();
    for scenario in scenarios {
        let test = generate_dataset(scenario, TEST_INDEX_OFFSET, cfg.generalisation_samples)?;
        let (wmmse, _) = evaluate_baseline(cfg, Baseline::Wmmse, &test);
        for m in models {
            let spec = m.model.spec();
            let (rates, _) = evaluate_model(&m.model, spec, &test)?;
            rows.push(GeneralisationRow {
                pairs: scenario.pairs.unwrap_or(0),
                region_side: scenario.region_side,
                algorithm: m.variant.name().into(),
                spec,
                mean_sum_rate: mean(&rates),
                normalized: normalized_performance(&rates, &wmmse).map_err(|e| HarnessError::Config(e.to_string()))?,
            });
        }
    }
    Ok(rows)
}

pub fn generalisation_csv(rows: &[GeneralisationRow]) -> CsvTable {
    let mut t = CsvTable::new(&["pairs", "region_side", "algorithm", "spec", "mean_sum_rate", "normalized"]);
    for r in rows {
        t.push(vec![
            r.pairs.to_string(),
            r.region_side.to_string(),
            r.algorithm.clone(),
            r.spec.to_string(),
            r.mean_sum_rate.to_string(),
            r.normalized.to_string(),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub pairs: usize,
    pub algorithm: String,
    pub spec: Option<ThresholdSpec>,
    pub edges: usize,
    pub median_time_s: f64,
    pub graph_build_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingStudy {
    pub rows: Vec<TimingRow>,
    /// Least-squares slope of log time against log T, per algorithm.
    pub slopes: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Median inference time per algorithm and pair count at density
/// `figure_intensity` and exponent `timing_alpha`, thresholds solved at
/// `target_ratio`. Models are randomly initialised; only their shape matters.
pub fn run_timing(cfg: &ExperimentConfig, target_ratio: f64) -> Result<TimingStudy> {
    if cfg.timing_pairs.is_empty() {
        return Err(HarnessError::Usage("timing_pairs must be non-empty".into()));
    }
    let timing = cfg.timing_config();
    let mut warnings = Vec::new();
    if timing.is_noisy() {
        warnings.push(format!(
            "timing_repeats = {}, timing_warmup = {}: measurements are noisy",
            timing.repeats, timing.warmup
        ));
    }
    let local = ExperimentConfig { target_ratio, alpha: cfg.timing_alpha, ..cfg.clone() };
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for &t in &cfg.timing_pairs {
        let side = (t as f64 / cfg.figure_intensity).sqrt();
        let scenario = local.scenario_with(t, side);
        let net = generate_dataset(&scenario, TEST_INDEX_OFFSET, 1)?.remove(0);
        for &variant in &cfg.models {
            let spec = local.resolve_spec(variant, &scenario)?;
            let graph = build_graph(&net, spec).map_err(GnnError::from)?;
            let scaler = FeatureScaler::fit(std::slice::from_ref(&graph), cfg.encoding);
            let model = GnnModel::new(&cfg.model_config(), scaler, spec, scenario.p_max, cfg.seed)?;
            let timed = pool.install(|| gnn::infer_timed(&model, &net, spec, timing))?;
            if timed.allocation.inference_time < 1e-6 {
                warnings.push(format!(
                    "{} at T={t}: median {:.3e} s is below 1 µs",
                    variant.name(),
                    timed.allocation.inference_time
                ));
            }
            rows.push(TimingRow {
                pairs: t,
                algorithm: variant.name().into(),
                spec: Some(spec),
                edges: timed.edges,
                median_time_s: timed.allocation.inference_time,
                graph_build_s: timed.graph_build_time,
            });
        }
        if cfg.baselines.contains(&Baseline::Wmmse) {
            let wm = cfg.wmmse_config();
            let mut times = Vec::with_capacity(timing.repeats.max(1));
            pool.install(|| {
                for _ in 0..timing.warmup {
                    std::hint::black_box(wmmse_allocate(&net, &wm));
                }
                for _ in 0..timing.repeats.max(1) {
                    times.push(std::hint::black_box(wmmse_allocate(&net, &wm)).allocation.inference_time);
                }
            });
            rows.push(TimingRow {
                pairs: t,
                algorithm: "wmmse".into(),
                spec: None,
                edges: 0,
                median_time_s: gnn::median(&mut times),
                graph_build_s: 0.0,
            });
        }
    }
    let mut slopes = Vec::new();
    if cfg.timing_pairs.len() >= 2 {
        let mut names: Vec<String> = Vec::new();
        for r in &rows {
            if !names.contains(&r.algorithm) {
                names.push(r.algorithm.clone());
            }
        }
        for name in names {
            let (x, y): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| r.algorithm == name).map(|r| (r.pairs as f64, r.median_time_s)).unzip();
            slopes.push((name, log_log_slope(&x, &y)));
        }
    }
    Ok(TimingStudy { rows, slopes, warnings })
}

impl TimingStudy {
    pub fn time(&self, algorithm: &str, pairs: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.pairs == pairs).map(|r| r.median_time_s)
    }

    pub fn slope(&self, algorithm: &str) -> Option<f64> {
        self.slopes.iter().find(|(n, _)| n == algorithm).map(|&(_, s)| s)
    }

    /// `pairs, algorithm, spec, edges` are deterministic; the time columns are not.
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["pairs", "algorithm", "spec", "edges", "median_time_s", "graph_build_s"]);
        for r in &self.rows {
            t.push(vec![
                r.pairs.to_string(),
                r.algorithm.clone(),
                r.spec.map(|s| s.to_string()).unwrap_or_default(),
                r.edges.to_string(),
                r.median_time_s.to_string(),
                r.graph_build_s.to_string(),
            ]);
        }
        t
    }

    pub fn slopes_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["algorithm", "log_log_slope"]);
        for (n, s) in &self.slopes {
            t.push(vec![n.clone(), s.to_string()]);
        }
        t
    }
}

/// One checked claim of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReproduceOutcome {
    pub files: Vec<PathBuf>,
    pub assertions: Vec<Assertion>,
    pub warnings: Vec<String>,
}

impl ReproduceOutcome {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    fn write(&mut self, table: &CsvTable, dir: &Path, name: &str, meta: &CsvMeta) -> Result<()> {
        let path = dir.join(name);
        table.write(&path, meta)?;
        self.files.push(path);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Table(u8),
    Figure(u8),
}

/// Run the pipeline behind one table or figure and write its CSVs to
/// `cfg.output_dir`.
pub fn reproduce(cfg: &ExperimentConfig, target: Target) -> Result<ReproduceOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let meta = CsvMeta::for_config(cfg);
    let mut out = ReproduceOutcome::default();
    match target {
        Target::Table(1) | Target::Table(2) => {
            let tables = run_threshold_tables(&RATIO_GRID, &ALPHA_GRID, &INTENSITY_GRID, 0.95, cfg.d0)?;
            if target == Target::Table(1) {
                out.write(&tables.distance_csv(), &dir, "table1.csv", &meta)?;
                out.write(&tables.distance_cells_csv(), &dir, "table1_cells.csv", &meta)?;
                out.assertions.extend(threshold_assertions("distance", &tables.distance));
            } else {
                out.write(&tables.neighbour_csv(), &dir, "table2.csv", &meta)?;
                out.write(&tables.neighbour_cells_csv(), &dir, "table2_cells.csv", &meta)?;
                out.assertions.extend(threshold_assertions("neighbour", &tables.neighbour));
            }
        }
        Target::Table(3) | Target::Table(4) => {
            let study = run_variance_study(cfg, &INTENSITY_GRID, &ALPHA_GRID)?;
            let (name, table) = if target == Target::Table(3) {
                ("table3.csv", study.distance_csv())
            } else {
                ("table4.csv", study.neighbour_csv())
            };
            out.write(&table, &dir, name, &meta)?;
            out.write(&study.cells_csv(), &dir, "variance_cells.csv", &meta)?;
            out.assertions.extend(variance_assertions(&study));
            out.warnings.extend(study.warnings);
        }
        Target::Table(5) => {
            let mut t = CsvTable::new(&["d_min", "d_max", "algorithm", "normalized"]);
            for &[lo, hi] in &cfg.distance_ranges {
                let side = (cfg.distribution_pairs as f64 / cfg.distribution_intensity).sqrt();
                let scenario =
                    ScenarioConfig { d_min: lo, d_max: hi, ..cfg.scenario_with(cfg.distribution_pairs, side) };
                let perf = run_performance_experiment(cfg, &scenario)?;
                for s in perf.summaries.iter().filter(|s| s.algorithm != "wmmse") {
                    t.push(vec![lo.to_string(), hi.to_string(), s.algorithm.clone(), s.normalized.to_string()]);
                }
                if let (Some(n), Some(h)) = (perf.normalized("n-gnn"), perf.normalized("heuristic")) {
                    out.assertions.push(Assertion::new(
                        format!("n-gnn above heuristic for d in [{lo}, {hi}]"),
                        n > h,
                        format!("n-gnn {n:.4}, heuristic {h:.4}"),
                    ));
                }
            }
            out.write(&t, &dir, "table5.csv", &meta)?;
        }
        Target::Table(6) | Target::Table(7) => {
            let (train_scenario, evals) = if target == Target::Table(6) {
                let side = |t: usize| (t as f64 / cfg.size_intensity).sqrt();
                (
                    cfg.scenario_with(cfg.size_train_pairs, side(cfg.size_train_pairs)),
                    cfg.size_eval_pairs.iter().map(|&t| cfg.scenario_with(t, side(t))).collect::<Vec<_>>(),
                )
            } else {
                let side = cfg.density_region_side;
                (
                    cfg.scenario_with(cfg.density_train_pairs, side),
                    cfg.density_eval_pairs.iter().map(|&t| cfg.scenario_with(t, side)).collect::<Vec<_>>(),
                )
            };
            let train_set = generate_dataset(&train_scenario, 0, cfg.train_samples)?;
            let mut models = Vec::new();
            for &v in cfg.models.iter().filter(|&&v| v != GnnVariant::Complete) {
                models.push(train_variant(cfg, v, &train_scenario, &train_set, None)?);
            }
            let rows = run_generalisation(cfg, &models, &evals)?;
            let name = if target == Target::Table(6) { "table6.csv" } else { "table7.csv" };
            out.write(&generalisation_csv(&rows), &dir, name, &meta)?;
            for r in rows.iter().filter(|r| r.algorithm == "n-gnn") {
                out.assertions.push(Assertion::new(
                    format!("n-gnn keeps 90% at T={} on {}x{}", r.pairs, r.region_side, r.region_side),
                    r.normalized >= 0.9,
                    format!("normalized {:.4}", r.normalized),
                ));
            }
        }
        Target::Figure(3) => {
            let mut t = CsvTable::new(&["pairs", "algorithm", "spec", "mean_sum_rate", "normalized"]);
            for &pairs in &cfg.figure_pairs {
                let side = (pairs as f64 / cfg.figure_intensity).sqrt();
                let perf = run_performance_experiment(cfg, &cfg.scenario_with(pairs, side))?;
                for s in &perf.summaries {
                    t.push(vec![
                        pairs.to_string(),
                        s.algorithm.clone(),
                        s.spec.map(|x| x.to_string()).unwrap_or_default(),
                        s.mean_sum_rate.to_string(),
                        s.normalized.to_string(),
                    ]);
                }
                if let Some(w) = perf.normalized("wmmse") {
                    out.assertions.push(Assertion::new(
                        format!("wmmse normalises to 1 at T={pairs}"),
                        w == 1.0,
                        w.to_string(),
                    ));
                }
            }
            out.write(&t, &dir, "figure3.csv", &meta)?;
        }
        Target::Figure(4) | Target::Figure(5) => {
            let ratio = if target == Target::Figure(4) { cfg.target_ratio } else { 0.98 };
            let study = run_timing(cfg, ratio)?;
            let stem = if target == Target::Figure(4) { "figure4" } else { "figure5" };
            out.write(&study.csv(), &dir, &format!("{stem}.csv"), &meta)?;
            out.write(&study.slopes_csv(), &dir, &format!("{stem}_slopes.csv"), &meta)?;
            out.assertions.extend(timing_assertions(&study));
            out.warnings.extend(study.warnings);
        }
        Target::Table(n) => return Err(HarnessError::Usage(format!("no table {n}; expected 1 to 7"))),
        Target::Figure(n) => return Err(HarnessError::Usage(format!("no figure {n}; expected 3, 4 or 5"))),
    }
    Ok(out)
}

pub fn threshold_assertions(kind: &str, cells: &[ThresholdCell]) -> Vec<Assertion> {
    let count = |s: CellStatus| cells.iter().filter(|c| c.status == s).count();
    let checked = cells.iter().filter(|c| c.reference.is_some()).count();
    let documented: Vec<String> = cells
        .iter()
        .filter(|c| c.status == CellStatus::DocumentedDiscrepancy)
        .map(|c| format!("({}, {}): {} vs {}", c.row, c.alpha, fmt_opt(c.value), fmt_opt(c.reference)))
        .collect();
    let mismatched: Vec<String> = cells
        .iter()
        .filter(|c| matches!(c.status, CellStatus::Mismatch | CellStatus::RouteDisagreement | CellStatus::Error))
        .map(|c| {
            format!("({}, {}): {} vs {} [{}]", c.row, c.alpha, fmt_opt(c.value), fmt_opt(c.reference), c.status.name())
        })
        .collect();
    let mut detail = format!("{}/{} cells match", count(CellStatus::Match), checked);
    if !documented.is_empty() {
        detail += &format!("; documented discrepancies {}", documented.join(", "));
    }
    if !mismatched.is_empty() {
        detail += &format!("; failing {}", mismatched.join(", "));
    }
    vec![
        Assertion::new(format!("{kind} thresholds match reference"), mismatched.is_empty(), detail),
        Assertion::new(
            format!("{kind} closed form agrees with quadrature"),
            count(CellStatus::RouteDisagreement) == 0 && count(CellStatus::Error) == 0,
            format!("{} disagreements, {} errors", count(CellStatus::RouteDisagreement), count(CellStatus::Error)),
        ),
    ]
}

pub fn variance_assertions(study: &VarianceStudy) -> Vec<Assertion> {
    let mut out = Vec::new();
    if let Some(c) = study.cell(0.002, 5.0) {
        out.push(Assertion::new(
            "distance/neighbour variance ratio above 10 at (0.002, 5)",
            c.variance_ratio() > 10.0,
            format!(
                "var_distance {:.4e}, var_neighbour {:.4e}, ratio {:.3}",
                c.var_distance,
                c.var_neighbour,
                c.variance_ratio()
            ),
        ));
    }
    for alpha in [3.0, 3.5, 4.0] {
        if let Some(c) = study.cell(0.03, alpha) {
            out.push(Assertion::new(
                format!("both variances below 0.5 at (0.03, {alpha})"),
                c.var_distance < 0.5 && c.var_neighbour < 0.5,
                format!("var_distance {:.4e}, var_neighbour {:.4e}", c.var_distance, c.var_neighbour),
            ));
        }
    }
    out
}

pub fn timing_assertions(study: &TimingStudy) -> Vec<Assertion> {
    let mut out = Vec::new();
    if let Some(s) = study.slope("n-gnn") {
        out.push(Assertion::new("n-gnn log-log slope in [0.8, 1.4]", (0.8..=1.4).contains(&s), format!("{s:.3}")));
    }
    if let Some(s) = study.slope("complete-gnn") {
        out.push(Assertion::new(
            "complete-gnn log-log slope in [1.6, 2.4]",
            (1.6..=2.4).contains(&s),
            format!("{s:.3}"),
        ));
    }
    if let (Some(n), Some(c)) = (study.time("n-gnn", 200), study.time("complete-gnn", 200)) {
        out.push(Assertion::new(
            "n-gnn at least 2x faster than complete-gnn at T=200",
            c >= 2.0 * n,
            format!("n-gnn {n:.3e} s, complete-gnn {c:.3e} s, speed-up {:.1}x", c / n),
        ));
    }
    out
}
