//! Experiment orchestration: config ingestion, the simulate → settle →
//! tables → equilibria → learning pipeline, and artifact emission.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ewa::{
    derive_seed, run_ewa, sweep, write_sweep_scatter, write_sweep_table, write_trajectory, Beta, EwaParams,
    SweepGrid, SweepStats, UpdateMode, DEFAULT_FIXED_POINT_THRESHOLD,
};
use crate::game::{
    normalize_tables, reference_tables, write_equilibria, write_long_tables, write_symmetric_tables,
    EquilibriumReport, PayoffTable, ScenarioRuns,
};
use crate::grid_model::{GridParams, DEFAULT_GRID_PROFILE};
use crate::pricing::{write_settlement_rows, Mechanism, DEFAULT_DUAL_TOL_MW, SETTLEMENT_CSV_HEADER};
use crate::scenario::{ScenarioConfig, StrategyProfile};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Grid parameters by profile name or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSource {
    Profile(String),
    Inline(GridParams),
}

impl Default for GridSource {
    fn default() -> Self {
        GridSource::Profile(DEFAULT_GRID_PROFILE.to_string())
    }
}

impl GridSource {
    pub fn resolve(&self) -> Result<GridParams> {
        match self {
            GridSource::Profile(name) => GridParams::from_profile(name),
            GridSource::Inline(p) => {
                p.validate()?;
                Ok(*p)
            }
        }
    }
}

/// A symmetric (g, l) row supplied directly instead of simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub mechanism: Mechanism,
    pub t_game_min: f64,
    pub r_pct_per_min: f64,
    pub g: f64,
    pub l: f64,
}

impl TableRow {
    pub fn to_table(&self) -> PayoffTable {
        PayoffTable::symmetric(self.mechanism, self.t_game_min, self.r_pct_per_min, self.g, self.l)
    }

    pub fn from_table(t: &PayoffTable) -> Self {
        Self {
            mechanism: t.mechanism,
            t_game_min: t.t_game_min,
            r_pct_per_min: t.r_pct_per_min,
            g: t.g1,
            l: t.l1,
        }
    }
}

/// Single learning realisation recorded per table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub params: EwaParams,
    pub rounds: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            params: EwaParams::new(0.25, 0.05, 1.0, Beta::Finite(1.0)).with_mode(UpdateMode::BatchSample),
            rounds: 100,
        }
    }
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_dt() -> f64 {
    1.0
}
fn default_mechanisms() -> Vec<Mechanism> {
    Mechanism::ALL.to_vec()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_dual_tol() -> f64 {
    DEFAULT_DUAL_TOL_MW
}
fn default_threshold() -> f64 {
    DEFAULT_FIXED_POINT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub grid: GridSource,
    /// Integration step [s].
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "ScenarioConfig::reference_set")]
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<Mechanism>,
    #[serde(default)]
    pub sweep: SweepGrid,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    /// Not part of the config hash.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub root_seed: u64,
    /// Analyse supplied (g, l) rows instead of simulated tables.
    #[serde(default, alias = "tables_from_paper")]
    pub use_reference_tables: bool,
    /// Rows used with `use_reference_tables`; built-in reference values when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_tables: Option<Vec<TableRow>>,
    #[serde(default = "default_dual_tol")]
    pub dual_tol_mw: f64,
    #[serde(default = "default_threshold")]
    pub fixed_point_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the JSON path and line/column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, message: String| Error::Config { path: path.into(), message };
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(field(
                "schema_version",
                format!("unsupported version {} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.scenarios.is_empty() {
            return Err(field("scenarios", "at least one scenario is required".into()));
        }
        if self.mechanisms.is_empty() {
            return Err(field("mechanisms", "at least one mechanism is required".into()));
        }
        self.grid.resolve().map_err(|e| field("grid", e.to_string()))?;
        for (i, s) in self.scenarios.iter().enumerate() {
            s.validate().map_err(|e| field(&format!("scenarios[{i}]"), e.to_string()))?;
        }
        self.sweep.validate().map_err(|e| field("sweep", e.to_string()))?;
        self.trajectory
            .params
            .validate()
            .map_err(|e| field("trajectory.params", e.to_string()))?;
        if self.trajectory.rounds == 0 {
            return Err(field("trajectory.rounds", "must be >= 1".into()));
        }
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return Err(field("dt_s", format!("must be > 0, got {}", self.dt_s)));
        }
        if !(self.dual_tol_mw.is_finite() && self.dual_tol_mw >= 0.0) {
            return Err(field("dual_tol_mw", "must be >= 0".into()));
        }
        if !(self.fixed_point_threshold > 0.0 && self.fixed_point_threshold < 0.5) {
            return Err(field("fixed_point_threshold", "must lie in (0, 0.5)".into()));
        }
        if let Some(rows) = &self.reference_tables {
            if rows.is_empty() {
                return Err(field("reference_tables", "must not be empty".into()));
            }
        }
        Ok(())
    }

    /// Canonical JSON of everything that determines the results.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn supplied_tables(&self) -> Vec<PayoffTable> {
        match &self.reference_tables {
            Some(rows) => rows.iter().map(TableRow::to_table).collect(),
            None => reference_tables(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub root_seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes files below a root directory and records their hashes.
pub struct ArtifactWriter {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl ArtifactWriter {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root, files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Renders `rel` through `render` and writes it in one go.
    pub fn write(
        &mut self,
        rel: &str,
        render: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<PathBuf> {
        let mut buf = Vec::new();
        render(&mut buf).map_err(|e| Error::io(rel, e))?;
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(&buf)),
        });
        Ok(path)
    }

    pub fn files(&self) -> &[ManifestEntry] {
        &self.files
    }

    /// Writes `config.json` and `manifest.json`.
    pub fn finish(mut self, config: &ExperimentConfig) -> Result<Manifest> {
        let json = serde_json::to_vec_pretty(config)?;
        self.write("config.json", |w| {
            w.extend_from_slice(&json);
            w.push(b'\n');
            Ok(())
        })?;
        let mut files = self.files;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            config_hash: config.hash(),
            root_seed: config.root_seed,
            files,
        };
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Label of a scenario without the mechanism, e.g. `T1_r400`.
pub fn scenario_label(cfg: &ScenarioConfig) -> String {
    format!("T{}_r{}", cfg.t_game, cfg.ramp_pct_per_min)
}

fn profile_suffix(p: StrategyProfile) -> String {
    format!("S{}{}", p.s1 as u8, p.s2 as u8)
}

/// Simulates all four strategy profiles of every configured scenario.
pub fn simulate_scenarios(cfg: &ExperimentConfig) -> Result<Vec<ScenarioRuns>> {
    let grid = cfg.grid.resolve()?;
    cfg.scenarios
        .par_iter()
        .map(|s| {
            ScenarioRuns::simulate(s, &grid, cfg.dt_s).map_err(|e| Error::Scenario {
                id: scenario_label(s),
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn write_traces(out: &mut ArtifactWriter, runs: &[ScenarioRuns]) -> Result<()> {
    for (i, run) in runs.iter().enumerate() {
        for (profile, trace) in &run.traces {
            let rel = format!(
                "traces/s{i:02}_{}_{}.csv",
                scenario_label(&run.config),
                profile_suffix(*profile)
            );
            out.write(&rel, |w| trace.write_csv(w))?;
        }
    }
    Ok(())
}

/// Raw (unnormalized) tables per scenario and mechanism, plus settlement rows.
pub fn settle_scenarios(
    cfg: &ExperimentConfig,
    runs: &[ScenarioRuns],
    out: &mut ArtifactWriter,
) -> Result<Vec<PayoffTable>> {
    let mut tables = Vec::new();
    let mut csv = Vec::new();
    use std::io::Write;
    writeln!(csv, "{SETTLEMENT_CSV_HEADER}").map_err(|e| Error::io("settlements.csv", e))?;
    for &mech in &cfg.mechanisms {
        for run in runs {
            let label = scenario_label(&run.config);
            for profile in StrategyProfile::ALL {
                let settled = run
                    .settle(profile, mech, cfg.dual_tol_mw)
                    .map_err(|e| Error::Scenario { id: run.config.id(mech), source: Box::new(e) })?;
                write_settlement_rows(&mut csv, &format!("{label}_{}", profile_suffix(profile)), &settled)
                    .map_err(|e| Error::io("settlements.csv", e))?;
            }
            tables.push(run.table(mech, cfg.dual_tol_mw)?);
        }
    }
    out.write("settlements.csv", |w| {
        w.extend_from_slice(&csv);
        Ok(())
    })?;
    Ok(tables)
}

/// Tables handed to the game and learning analysis.
#[derive(Debug, Clone)]
pub struct AnalysisTables {
    /// Normalized, well-formed tables.
    pub tables: Vec<PayoffTable>,
    /// Raw tables that failed the g > 0, l > 0 check.
    pub flagged: Vec<PayoffTable>,
}

/// Simulated tables (normalized over the well-formed set) or supplied rows.
pub fn payoff_stage(
    cfg: &ExperimentConfig,
    runs: Option<&[ScenarioRuns]>,
    out: &mut ArtifactWriter,
) -> Result<AnalysisTables> {
    let result = if cfg.use_reference_tables {
        let tables = cfg.supplied_tables();
        for t in &tables {
            t.check()?;
        }
        AnalysisTables { tables, flagged: Vec::new() }
    } else {
        let owned;
        let runs = match runs {
            Some(r) => r,
            None => {
                owned = simulate_scenarios(cfg)?;
                &owned[..]
            }
        };
        let raw = settle_scenarios(cfg, runs, out)?;
        out.write("payoff_tables_raw.csv", |w| write_long_tables(w, &raw))?;
        let (good, flagged): (Vec<_>, Vec<_>) = raw.into_iter().partition(|t| t.is_well_formed());
        if good.is_empty() {
            let first = flagged.first().map(|t| t.scenario_id.clone()).unwrap_or_default();
            return Err(Error::MalformedTable {
                id: first,
                reason: "no simulated table has the g > 0, l > 0 structure".into(),
            });
        }
        AnalysisTables { tables: normalize_tables(&good)?, flagged }
    };
    out.write("payoff_tables.csv", |w| write_symmetric_tables(w, &result.tables))?;
    out.write("payoff_tables_long.csv", |w| write_long_tables(w, &result.tables))?;
    Ok(result)
}

pub fn equilibria_stage(tables: &AnalysisTables, out: &mut ArtifactWriter) -> Result<Vec<EquilibriumReport>> {
    let reports: Vec<EquilibriumReport> = tables
        .tables
        .iter()
        .chain(&tables.flagged)
        .map(EquilibriumReport::analyze)
        .collect();
    out.write("equilibria.csv", |w| write_equilibria(w, &reports))?;
    Ok(reports)
}

/// One learning realisation per table, all starting from the same attractions.
pub fn trajectory_stage(cfg: &ExperimentConfig, tables: &[PayoffTable], out: &mut ArtifactWriter) -> Result<()> {
    let seed = derive_seed(cfg.root_seed, 0);
    let trajectories = tables
        .par_iter()
        .map(|t| run_ewa(&cfg.trajectory.params, t, cfg.trajectory.rounds, seed))
        .collect::<Result<Vec<_>>>()?;
    for (t, traj) in tables.iter().zip(&trajectories) {
        out.write(&format!("trajectories/{}.csv", t.scenario_id), |w| write_trajectory(w, traj))?;
    }
    Ok(())
}

pub fn sweep_stage(cfg: &ExperimentConfig, tables: &[PayoffTable], out: &mut ArtifactWriter) -> Result<SweepStats> {
    let stats = sweep(&cfg.sweep, tables, cfg.root_seed)?;
    out.write("sweep_table.csv", |w| write_sweep_table(w, &stats))?;
    out.write("sweep_scatter.csv", |w| write_sweep_scatter(w, &stats, tables))?;
    Ok(stats)
}

/// Full pipeline into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Manifest> {
    config.validate()?;
    let mut out = ArtifactWriter::new(&config.output_dir)?;
    let runs = simulate_scenarios(config)?;
    write_traces(&mut out, &runs)?;
    let tables = payoff_stage(config, Some(&runs), &mut out)?;
    equilibria_stage(&tables, &mut out)?;
    trajectory_stage(config, &tables.tables, &mut out)?;
    sweep_stage(config, &tables.tables, &mut out)?;
    out.finish(config)
}
