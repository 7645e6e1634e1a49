//! Batch sweeps over one system parameter with a set of baselines.
//!
//! An experiment file is TOML:
//!
//! ```toml
//! seed = 11
//! output = "out/power"          # directory, relative to the spec file
//! scenario = "default.toml"     # path relative to the spec file, or an inline table
//! monte_carlo = false
//! mc_realizations = 200
//! random_draws = 10
//! execution = "parallel"
//!
//! [sweep]
//! axis = "data-power-dbm"       # or "elements", "antennas", "realizations"
//! values = [10, 15, 20]
//! baselines = ["optimized-es", "passive", "no-ris"]
//!
//! [optimizer]                   # optional PGAM settings
//! n_restarts = 5
//! ```
//!
//! The spec seed drives the optimizer restarts, the random baselines and the
//! Monte-Carlo draws; user placement follows the scenario's own seed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{dbm_to_watts, ScenarioConfig};
use crate::error::{Error, Result};
use crate::optimizer::pgam::{
    initial_state, multi_start, multi_start_from, optimize_ms, pgam_run_blocks, random_baseline_start, Blocks,
    PgamConfig, RandomBlock,
};
use crate::optimizer::trace::{csv_error, OptimizationTrace};
use crate::parallel::Execution;
use crate::scenario::{build_scenario, ScenarioStatistics};
use crate::spectral::{evaluate_se, se_monte_carlo, se_no_ris, SEResult};
use crate::surface::SurfaceState;

/// Version of the results table layout, recorded in the manifest.
pub const SCHEMA_VERSION: u32 = 1;

/// Column order of the results table.
pub const COLUMNS: [&str; 9] = [
    "axis_value",
    "baseline",
    "status",
    "sum_se",
    "per_user_se",
    "mc_sum_se",
    "mc_half_width",
    "wall_time_s",
    "reason",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Downlink power `P` in dBm.
    DataPowerDbm,
    /// Surface element count `N`, laid out as the most square `n_x * n_y`.
    Elements,
    /// BS antenna count `M`.
    Antennas,
    /// Monte-Carlo realization count (turns validation on).
    Realizations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    OptimizedEs,
    OptimizedMs,
    RandomPhase,
    RandomAmplitude,
    RandomAac,
    Passive,
    NoRis,
    ConventionalRis,
}

impl Baseline {
    pub const ALL: [Baseline; 8] = [
        Baseline::OptimizedEs,
        Baseline::OptimizedMs,
        Baseline::RandomPhase,
        Baseline::RandomAmplitude,
        Baseline::RandomAac,
        Baseline::Passive,
        Baseline::NoRis,
        Baseline::ConventionalRis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::OptimizedEs => "optimized-es",
            Baseline::OptimizedMs => "optimized-ms",
            Baseline::RandomPhase => "random-phase",
            Baseline::RandomAmplitude => "random-amplitude",
            Baseline::RandomAac => "random-aac",
            Baseline::Passive => "passive",
            Baseline::NoRis => "no-ris",
            Baseline::ConventionalRis => "conventional-ris",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub baselines: Vec<Baseline>,
}

/// Scenario given by file or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Path(PathBuf),
    Inline(Box<ScenarioConfig>),
}

impl Default for ScenarioRef {
    fn default() -> Self {
        ScenarioRef::Inline(Box::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default)]
    pub scenario: ScenarioRef,
    #[serde(default)]
    pub monte_carlo: bool,
    #[serde(default = "default_mc_realizations")]
    pub mc_realizations: usize,
    #[serde(default = "default_random_draws")]
    pub random_draws: usize,
    #[serde(default)]
    pub execution: Execution,
    pub sweep: Sweep,
    #[serde(default)]
    pub optimizer: PgamConfig,
}

fn default_mc_realizations() -> usize {
    200
}

fn default_random_draws() -> usize {
    10
}

impl ExperimentSpec {
    /// Parses a spec; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, origin: &str, base_dir: &Path) -> Result<Self> {
        let mut spec: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if let ScenarioRef::Path(p) = &spec.scenario {
            spec.scenario = ScenarioRef::Path(base_dir.join(p));
        }
        spec.output = base_dir.join(&spec.output);
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, &path.display().to_string(), base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.sweep.values.is_empty() {
            return bad("sweep values must not be empty");
        }
        if self.sweep.baselines.is_empty() {
            return bad("at least one baseline is required");
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite");
        }
        if matches!(self.sweep.axis, SweepAxis::Elements | SweepAxis::Antennas | SweepAxis::Realizations)
            && self.sweep.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0)
        {
            return bad("element, antenna and realization counts must be positive integers");
        }
        if self.random_draws == 0 {
            return bad("random_draws must be positive");
        }
        if (self.monte_carlo || self.sweep.axis == SweepAxis::Realizations) && self.mc_realizations < 2 {
            return bad("mc_realizations must be at least 2");
        }
        self.optimizer.validate()
    }

    /// The referenced scenario configuration.
    pub fn scenario_config(&self) -> Result<ScenarioConfig> {
        match &self.scenario {
            ScenarioRef::Path(p) => ScenarioConfig::load(p),
            ScenarioRef::Inline(c) => {
                c.validate()?;
                Ok((**c).clone())
            }
        }
    }

    fn pgam(&self) -> PgamConfig {
        PgamConfig {
            rng_seed: self.seed,
            ..self.optimizer.clone()
        }
    }
}

/// Most square factorization `n = n_x * n_y` with `n_x <= n_y`.
pub fn surface_layout(n: usize) -> (usize, usize) {
    let mut n_x = (n as f64).sqrt() as usize;
    while n_x > 1 && n % n_x != 0 {
        n_x -= 1;
    }
    let n_x = n_x.max(1);
    (n_x, n / n_x)
}

/// Scenario config with the sweep axis set to `value`, and the MC count.
pub fn apply_axis(base: &ScenarioConfig, spec: &ExperimentSpec, value: f64) -> (ScenarioConfig, usize) {
    let mut cfg = base.clone();
    let mut mc = spec.mc_realizations;
    match spec.sweep.axis {
        SweepAxis::DataPowerDbm => cfg.system.p_data = dbm_to_watts(value),
        SweepAxis::Elements => (cfg.system.n_x, cfg.system.n_y) = surface_layout(value as usize),
        SweepAxis::Antennas => cfg.system.m = value as usize,
        SweepAxis::Realizations => mc = value as usize,
    }
    (cfg, mc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub axis_value: f64,
    pub baseline: Baseline,
    pub status: RowStatus,
    pub sum_se: Option<f64>,
    pub per_user_se: Vec<f64>,
    pub mc_sum_se: Option<f64>,
    /// 95% half-width of the MC sum SE (per-user half-widths combined in quadrature).
    pub mc_half_width: Option<f64>,
    pub wall_time_s: f64,
    pub reason: Option<String>,
}

/// Inputs needed to re-evaluate one row: the effective scenario config and
/// the surface state(s) it was evaluated at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub axis_value: f64,
    pub baseline: Baseline,
    pub config: ScenarioConfig,
    pub states: Vec<SurfaceState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellRecord>,
}

impl ResultTable {
    /// Rows with the timing column zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Vec<ResultRow> {
        self.rows
            .iter()
            .map(|r| ResultRow {
                wall_time_s: 0.0,
                ..r.clone()
            })
            .collect()
    }
}

struct CellOutput {
    se: Vec<SEResult>,
    mc: Vec<(f64, f64)>,
    config: ScenarioConfig,
    states: Vec<SurfaceState>,
}

fn passive_config(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.system.sigma_v2 = 0.0;
    c
}

fn monte_carlo(
    scenario: &ScenarioStatistics,
    state: &SurfaceState,
    cfg: &ScenarioConfig,
    n: usize,
    seed: u64,
    execution: Execution,
) -> Result<(f64, f64)> {
    let mc = se_monte_carlo(scenario, state, cfg, n, seed, execution)?;
    let hw = mc.se_half_width.iter().map(|h| h * h).sum::<f64>().sqrt();
    Ok((mc.estimate.sum_se, hw))
}

fn run_cell(
    spec: &ExperimentSpec,
    cfg: &ScenarioConfig,
    baseline: Baseline,
    mc: Option<(usize, u64)>,
    execution: Execution,
) -> Result<CellOutput> {
    let scenario = build_scenario(cfg)?;
    let pgam = spec.pgam();
    let n = scenario.n();
    let (eval_cfg, states) = match baseline {
        Baseline::OptimizedEs => (cfg.clone(), vec![multi_start(&scenario, cfg, &pgam, execution)?.0]),
        Baseline::OptimizedMs => (cfg.clone(), vec![optimize_ms(&scenario, cfg, &pgam, execution)?.ms_state]),
        Baseline::RandomPhase | Baseline::RandomAmplitude | Baseline::RandomAac => {
            let which = match baseline {
                Baseline::RandomPhase => RandomBlock::Phase,
                Baseline::RandomAmplitude => RandomBlock::Amplitude,
                _ => RandomBlock::Amplification,
            };
            let single = PgamConfig { n_restarts: 1, ..pgam.clone() };
            let states = execution
                .map(spec.random_draws, |d| -> Result<SurfaceState> {
                    let (init, blocks) = random_baseline_start(&scenario, cfg, &single, which, d)?;
                    Ok(pgam_run_blocks(&scenario, cfg, &single, init, blocks)?.0)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            (cfg.clone(), states)
        }
        Baseline::Passive => {
            let pc = passive_config(cfg);
            let blocks = Blocks { alpha: false, ..Blocks::ALL };
            let (state, _) = multi_start_from(&scenario, &pc, &pgam, execution, blocks, |r| {
                let mut s = initial_state(&scenario, &pc, &pgam, r)?;
                s.alpha = vec![1.0; n];
                Ok(s)
            })?;
            (pc, vec![state])
        }
        Baseline::ConventionalRis => {
            let pc = passive_config(cfg);
            let n_t = n.div_ceil(2);
            let (state, _) = multi_start_from(&scenario, &pc, &pgam, execution, Blocks::THETA, |r| {
                let mut s = initial_state(&scenario, &pc, &pgam, r)?;
                s.alpha = vec![1.0; n];
                s.beta_t = (0..n).map(|i| if i < n_t { 1.0 } else { 0.0 }).collect();
                s.beta_r = (0..n).map(|i| if i < n_t { 0.0 } else { 1.0 }).collect();
                Ok(s)
            })?;
            (pc, vec![state])
        }
        Baseline::NoRis => {
            let se = se_no_ris(&scenario, cfg)?;
            let mc = match mc {
                Some((count, seed)) => {
                    let off = scenario.without_surface()?;
                    vec![monte_carlo(&off, &SurfaceState::passive_uniform(n), cfg, count, seed, execution)?]
                }
                None => vec![],
            };
            return Ok(CellOutput {
                se: vec![se],
                mc,
                config: cfg.clone(),
                states: vec![],
            });
        }
    };
    let se = states
        .iter()
        .map(|s| evaluate_se(&scenario, s, &eval_cfg))
        .collect::<Result<Vec<_>>>()?;
    let mc = match mc {
        Some((count, seed)) => states
            .iter()
            .map(|s| monte_carlo(&scenario, s, &eval_cfg, count, seed, execution))
            .collect::<Result<Vec<_>>>()?,
        None => vec![],
    };
    Ok(CellOutput {
        se,
        mc,
        config: eval_cfg,
        states,
    })
}

fn average(outputs: &[SEResult]) -> (f64, Vec<f64>) {
    let n = outputs.len() as f64;
    let k = outputs[0].k();
    let per_user = (0..k).map(|i| outputs.iter().map(|o| o.se[i]).sum::<f64>() / n).collect();
    (outputs.iter().map(|o| o.sum_se).sum::<f64>() / n, per_user)
}

/// Runs every axis value x baseline cell. Cells run in the spec's work pool;
/// rows come back in (axis value, baseline) order. A failing cell yields a
/// `failed` row and the run continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let base = spec.scenario_config()?;
    let cells: Vec<(usize, f64, Baseline)> = spec
        .sweep
        .values
        .iter()
        .enumerate()
        .flat_map(|(i, &v)| spec.sweep.baselines.iter().map(move |&b| (i, v, b)))
        .collect();
    let mc_on = spec.monte_carlo || spec.sweep.axis == SweepAxis::Realizations;
    let results = spec.execution.map(cells.len(), |c| {
        let (axis_index, value, baseline) = cells[c];
        let (cfg, mc_count) = apply_axis(&base, spec, value);
        let mc = mc_on.then(|| (mc_count, spec.seed.wrapping_add(1 + axis_index as u64)));
        let start = Instant::now();
        let out = run_cell(spec, &cfg, baseline, mc, spec.execution);
        let wall_time_s = start.elapsed().as_secs_f64();
        match out {
            Ok(out) => {
                let (sum_se, per_user_se) = average(&out.se);
                let (mc_sum_se, mc_half_width) = if out.mc.is_empty() {
                    (None, None)
                } else {
                    let n = out.mc.len() as f64;
                    let mean = out.mc.iter().map(|m| m.0).sum::<f64>() / n;
                    let hw = out.mc.iter().map(|m| m.1 * m.1).sum::<f64>().sqrt() / n;
                    (Some(mean), Some(hw))
                };
                let row = ResultRow {
                    axis_value: value,
                    baseline,
                    status: RowStatus::Ok,
                    sum_se: Some(sum_se),
                    per_user_se,
                    mc_sum_se,
                    mc_half_width,
                    wall_time_s,
                    reason: None,
                };
                let cell = CellRecord {
                    axis_value: value,
                    baseline,
                    config: out.config,
                    states: out.states,
                };
                (row, Some(cell))
            }
            Err(e) => (
                ResultRow {
                    axis_value: value,
                    baseline,
                    status: RowStatus::Failed,
                    sum_se: None,
                    per_user_se: vec![],
                    mc_sum_se: None,
                    mc_half_width: None,
                    wall_time_s,
                    reason: Some(e.to_string()),
                },
                None,
            ),
        }
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut records = Vec::new();
    for (row, cell) in results {
        rows.push(row);
        records.extend(cell);
    }
    Ok(ResultTable { rows, cells: records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    /// `results.csv`.
    DelimitedTable,
    /// `results.json`.
    StructuredText,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    axis_value: f64,
    baseline: Baseline,
    status: RowStatus,
    sum_se: Option<f64>,
    per_user_se: String,
    mc_sum_se: Option<f64>,
    mc_half_width: Option<f64>,
    wall_time_s: f64,
    reason: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub columns: Vec<String>,
    pub crate_version: String,
    pub seed: u64,
    pub spec: ExperimentSpec,
    pub scenario: ScenarioConfig,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the table and `manifest.json` (plus `cells.json` with the evaluated
/// states) into `dir`. Returns the table path.
pub fn emit_results(table: &ResultTable, spec: &ExperimentSpec, dir: &Path, format: OutputFormat) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = match format {
        OutputFormat::DelimitedTable => {
            let path = dir.join("results.csv");
            write_csv(&table.rows, &path)?;
            path
        }
        OutputFormat::StructuredText => {
            let path = dir.join("results.json");
            let text = serde_json::to_string_pretty(&table.rows).expect("rows serialize");
            write_text(&path, &text)?;
            path
        }
    };
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: spec.seed,
        spec: spec.clone(),
        scenario: spec.scenario_config()?,
    };
    write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    write_text(&dir.join("cells.json"), &serde_json::to_string(&table.cells).expect("cells serialize"))?;
    Ok(path)
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if rows.is_empty() {
        w.write_record(COLUMNS).map_err(|e| csv_error(path, e))?;
    }
    for r in rows {
        w.serialize(CsvRow {
            axis_value: r.axis_value,
            baseline: r.baseline,
            status: r.status,
            sum_se: r.sum_se,
            per_user_se: r.per_user_se.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
            mc_sum_se: r.mc_sum_se,
            mc_half_width: r.mc_half_width,
            wall_time_s: r.wall_time_s,
            reason: r.reason.clone(),
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let parse_err = |m: String| Error::Parse {
        path: path.display().to_string(),
        message: m,
    };
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_error(path, e))?;
            let per_user_se = if row.per_user_se.is_empty() {
                vec![]
            } else {
                row.per_user_se
                    .split(';')
                    .map(|x| x.parse::<f64>().map_err(|e| parse_err(e.to_string())))
                    .collect::<Result<_>>()?
            };
            Ok(ResultRow {
                axis_value: row.axis_value,
                baseline: row.baseline,
                status: row.status,
                sum_se: row.sum_se,
                per_user_se,
                mc_sum_se: row.mc_sum_se,
                mc_half_width: row.mc_half_width,
                wall_time_s: row.wall_time_s,
                reason: row.reason,
            })
        })
        .collect()
}

/// PGAM and AO traces from the same starting points on the spec's base scenario.
pub fn run_traces(spec: &ExperimentSpec) -> Result<(OptimizationTrace, OptimizationTrace)> {
    spec.validate()?;
    let cfg = spec.scenario_config()?;
    let scenario = build_scenario(&cfg)?;
    let pgam = spec.pgam();
    let (_, pgam_trace) = multi_start(&scenario, &cfg, &pgam, spec.execution)?;
    let (_, ao_trace) = crate::optimizer::pgam::ao_baseline(&scenario, &cfg, &pgam, spec.execution)?;
    Ok((pgam_trace, ao_trace))
}
