//! Experience-Weighted Attraction learning on the smart balancing game.
//!
//! Each BRP keeps an attraction per strategy (index 0: stay on schedule,
//! index 1: smart balancing) and a shared experience weight `N`. One update:
//!
//! ```text
//!   N[k]     = (1-κ)(1-α) N[k-1] + 1
//!   A_b^j[k] = ((1-α) N[k-1] A_b^j[k-1] + (δ + (1-δ) I(j, S_b[k])) π_b(j, S_-b[k])) / N[k]
//!   p_b^j[k] = exp(β A_b^j[k]) / Σ_j' exp(β A_b^j'[k])
//! ```
//!
//! Two observation models drive the payoff term: a batch of sampled games
//! (realized own-play fractions and batch-average payoffs) or the expectation
//! under both players' current mixed strategies.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::game::PayoffTable;
use crate::pricing::Mechanism;
use crate::scenario::StrategyProfile;

/// Intensity of choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Finite(f64),
    /// Best response on the attractions.
    Infinite,
}

impl Beta {
    pub fn is_valid(&self) -> bool {
        match *self {
            Beta::Finite(b) => b.is_finite() && b > 0.0,
            Beta::Infinite => true,
        }
    }
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Beta::Finite(b) => write!(f, "{b}"),
            Beta::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Beta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Beta::Infinite),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::arg(format!("invalid beta `{s}`")))?;
                if v.is_infinite() && v > 0.0 {
                    Ok(Beta::Infinite)
                } else {
                    Ok(Beta::Finite(v))
                }
            }
        }
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::Finite(b) => s.serialize_f64(*b),
            Beta::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Beta::Finite(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateMode {
    /// Sample `batch_size` games per update from the current mixed strategies.
    BatchSample,
    /// Use the expectation under both players' mixed strategies.
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EwaParams {
    pub delta: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub beta: Beta,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_mode")]
    pub mode: UpdateMode,
}

fn default_batch_size() -> usize {
    100
}
fn default_mode() -> UpdateMode {
    UpdateMode::Expected
}

impl EwaParams {
    pub fn new(delta: f64, alpha: f64, kappa: f64, beta: Beta) -> Self {
        Self {
            delta,
            alpha,
            kappa,
            beta,
            batch_size: default_batch_size(),
            mode: default_mode(),
        }
    }

    pub fn with_mode(self, mode: UpdateMode) -> Self {
        Self { mode, ..self }
    }

    pub fn with_batch_size(self, batch_size: usize) -> Self {
        Self { batch_size, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("alpha", self.alpha), ("kappa", self.kappa)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::arg(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !self.beta.is_valid() {
            return Err(Error::arg(format!("beta = {} must be > 0", self.beta)));
        }
        if self.mode == UpdateMode::BatchSample && self.batch_size == 0 {
            return Err(Error::arg("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Learner state after `k` updates; rows are players, columns strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct EwaState {
    pub n: f64,
    pub attractions: [[f64; 2]; 2],
    pub probs: [[f64; 2]; 2],
    pub k: usize,
}

impl EwaState {
    pub fn from_attractions(attractions: [[f64; 2]; 2], beta: Beta) -> Self {
        Self {
            n: 1.0,
            probs: attractions.map(|a| choice_probs(&a, beta)),
            attractions,
            k: 0,
        }
    }

    /// Probability that `brp` plays smart balancing.
    pub fn p_act(&self, brp: usize) -> f64 {
        self.probs[brp][1]
    }

    pub fn overreaction(&self) -> f64 {
        self.p_act(0) * self.p_act(1)
    }
}

/// Four independent standard-normal draws, player-major.
pub fn initial_attractions(seed: u64) -> [[f64; 2]; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || rng.sample::<f64, _>(StandardNormal);
    let a = [draw(), draw(), draw(), draw()];
    [[a[0], a[1]], [a[2], a[3]]]
}

/// `N[0] = 1` and seeded standard-normal attractions.
pub fn init_state(seed: u64, beta: Beta) -> EwaState {
    EwaState::from_attractions(initial_attractions(seed), beta)
}

/// Logit choice rule; best response with ties split evenly for infinite β.
pub fn choice_probs(attractions: &[f64; 2], beta: Beta) -> [f64; 2] {
    match beta {
        Beta::Infinite => {
            let [a0, a1] = *attractions;
            if a1 > a0 {
                [0.0, 1.0]
            } else if a0 > a1 {
                [1.0, 0.0]
            } else {
                [0.5, 0.5]
            }
        }
        Beta::Finite(b) => {
            let m = attractions[0].max(attractions[1]);
            let e = attractions.map(|a| (b * (a - m)).exp());
            let total = e[0] + e[1];
            [e[0] / total, e[1] / total]
        }
    }
}

/// What the players learn from in one update.
#[derive(Debug, Clone, Copy)]
pub enum Observation<'a> {
    /// Mixed strategies played this round, one row per player.
    Mixed([[f64; 2]; 2]),
    /// Realized joint actions of a batch of games.
    Batch(&'a [StrategyProfile]),
}

const ROW_SUM_TOL: f64 = 1e-9;

fn check_rows(rows: &[[f64; 2]; 2], what: &str) -> Result<()> {
    for (b, row) in rows.iter().enumerate() {
        let sum = row[0] + row[1];
        let off = (sum - 1.0).abs() > ROW_SUM_TOL || sum.is_nan();
        if off || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::StateCorruption(format!(
                "{what} row of player {} is ({}, {})",
                b + 1,
                row[0],
                row[1]
            )));
        }
    }
    Ok(())
}

/// Per-player, per-strategy payoff term `(δ + (1-δ) I) π` of one update.
fn payoff_increments(params: &EwaParams, table: &PayoffTable, obs: &Observation<'_>) -> Result<[[f64; 2]; 2]> {
    let delta = params.delta;
    let mut inc = [[0.0; 2]; 2];
    match obs {
        Observation::Mixed(probs) => {
            check_rows(probs, "observed strategy")?;
            for b in 0..2 {
                let opp = probs[1 - b];
                for j in 0..2 {
                    let own = j == 1;
                    let expected = opp[0] * table.payoff(b, own, false) + opp[1] * table.payoff(b, own, true);
                    inc[b][j] = (delta + (1.0 - delta) * probs[b][j]) * expected;
                }
            }
        }
        Observation::Batch(games) => {
            if games.is_empty() {
                return Err(Error::arg("empty batch"));
            }
            let n = games.len() as f64;
            for b in 0..2 {
                let own_act = games.iter().filter(|g| g.get(b)).count() as f64 / n;
                let opp_act = games.iter().filter(|g| g.get(1 - b)).count() as f64 / n;
                let own_frac = [1.0 - own_act, own_act];
                for j in 0..2 {
                    let own = j == 1;
                    let avg = (1.0 - opp_act) * table.payoff(b, own, false) + opp_act * table.payoff(b, own, true);
                    inc[b][j] = (delta + (1.0 - delta) * own_frac[j]) * avg;
                }
            }
        }
    }
    Ok(inc)
}

pub fn ewa_update(
    state: &EwaState,
    params: &EwaParams,
    table: &PayoffTable,
    observation: Observation<'_>,
) -> Result<EwaState> {
    check_rows(&state.probs, "learner probability")?;
    let inc = payoff_increments(params, table, &observation)?;
    let decay = (1.0 - params.alpha) * state.n;
    let n = (1.0 - params.kappa) * (1.0 - params.alpha) * state.n + 1.0;
    let mut attractions = [[0.0; 2]; 2];
    for b in 0..2 {
        for j in 0..2 {
            attractions[b][j] = (decay * state.attractions[b][j] + inc[b][j]) / n;
        }
    }
    Ok(EwaState {
        n,
        probs: attractions.map(|a| choice_probs(&a, params.beta)),
        attractions,
        k: state.k + 1,
    })
}

fn sample_batch(rng: &mut ChaCha8Rng, probs: &[[f64; 2]; 2], size: usize) -> Vec<StrategyProfile> {
    (0..size)
        .map(|_| {
            let s1 = rng.random::<f64>() < probs[0][1];
            let s2 = rng.random::<f64>() < probs[1][1];
            StrategyProfile::new(s1, s2)
        })
        .collect()
}

/// Runs `rounds` updates from `initial`; returns `rounds + 1` states
/// starting with `initial`. `sample_seed` only matters in batch mode.
pub fn run_ewa_from(
    params: &EwaParams,
    table: &PayoffTable,
    rounds: usize,
    initial: EwaState,
    sample_seed: u64,
) -> Result<Vec<EwaState>> {
    params.validate()?;
    if rounds == 0 {
        return Err(Error::arg("rounds must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut out = Vec::with_capacity(rounds + 1);
    out.push(initial);
    for _ in 0..rounds {
        let cur = out.last().expect("non-empty");
        let next = match params.mode {
            UpdateMode::Expected => ewa_update(cur, params, table, Observation::Mixed(cur.probs))?,
            UpdateMode::BatchSample => {
                let games = sample_batch(&mut rng, &cur.probs, params.batch_size);
                ewa_update(cur, params, table, Observation::Batch(&games))?
            }
        };
        out.push(next);
    }
    Ok(out)
}

/// Seeded run: initial attractions from `seed`, batch sampling from a
/// stream derived from it.
pub fn run_ewa(params: &EwaParams, table: &PayoffTable, rounds: usize, seed: u64) -> Result<Vec<EwaState>> {
    let initial = init_state(seed, params.beta);
    run_ewa_from(params, table, rounds, initial, derive_seed(seed, u64::MAX))
}

pub const TRAJECTORY_CSV_HEADER: &str = "k,p1,p2,p1p2";

pub fn write_trajectory<W: Write>(mut w: W, states: &[EwaState]) -> std::io::Result<()> {
    writeln!(w, "{TRAJECTORY_CSV_HEADER}")?;
    for s in states {
        writeln!(w, "{},{},{},{}", s.k, s.p_act(0), s.p_act(1), s.overreaction())?;
    }
    Ok(())
}

pub const DEFAULT_FIXED_POINT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPoint {
    /// Both players within the threshold of the given corner.
    Pure(StrategyProfile),
    Mixed,
}

/// `p1`, `p2` are the final smart-balancing probabilities.
pub fn classify_fixed_point(p1: f64, p2: f64, threshold: f64) -> Result<FixedPoint> {
    if !(threshold > 0.0 && threshold < 0.5) {
        return Err(Error::arg(format!("threshold {threshold} outside (0, 0.5)")));
    }
    let near_corner = |p: f64| p.min(1.0 - p) < threshold;
    if near_corner(p1) && near_corner(p2) {
        Ok(FixedPoint::Pure(StrategyProfile::new(p1 > 0.5, p2 > 0.5)))
    } else {
        Ok(FixedPoint::Mixed)
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `index` under `root`: `splitmix64(root ^ splitmix64(index))`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index))
}

/// Learning-parameter grid of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub deltas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub betas: Vec<Beta>,
    pub n_seeds: usize,
    pub rounds: usize,
    pub mode: UpdateMode,
    pub batch_size: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            deltas: vec![0.0, 0.25, 0.5],
            alphas: vec![0.0, 0.05, 0.1],
            kappas: vec![0.0, 0.5, 1.0],
            betas: vec![Beta::Finite(1.0), Beta::Infinite],
            n_seeds: 100,
            rounds: 100,
            mode: UpdateMode::Expected,
            batch_size: default_batch_size(),
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() || self.alphas.is_empty() || self.kappas.is_empty() || self.betas.is_empty() {
            return Err(Error::arg("sweep grid has an empty parameter axis"));
        }
        if self.n_seeds == 0 || self.rounds == 0 {
            return Err(Error::arg("sweep needs n_seeds >= 1 and rounds >= 1"));
        }
        for p in self.combinations(Beta::Finite(1.0)) {
            p.validate()?;
        }
        for b in &self.betas {
            if !b.is_valid() {
                return Err(Error::arg(format!("invalid beta {b}")));
            }
        }
        Ok(())
    }

    /// All (δ, α, κ) combinations at one β, δ-major.
    pub fn combinations(&self, beta: Beta) -> Vec<EwaParams> {
        let mut out = Vec::new();
        for &delta in &self.deltas {
            for &alpha in &self.alphas {
                for &kappa in &self.kappas {
                    out.push(EwaParams {
                        delta,
                        alpha,
                        kappa,
                        beta,
                        batch_size: self.batch_size,
                        mode: self.mode,
                    });
                }
            }
        }
        out
    }
}

/// Final state of one sweep run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub table: usize,
    pub params: EwaParams,
    pub seed: u64,
    pub p1: f64,
    pub p2: f64,
}

/// Aggregate over all (δ, α, κ) and seeds for one table and β.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub table: usize,
    pub mechanism: Mechanism,
    pub scenario_id: String,
    pub t_game_min: f64,
    pub r_pct_per_min: f64,
    pub l_plus_g: f64,
    pub l_minus_g: f64,
    pub beta: Beta,
    pub mean_p1p2: f64,
    pub std_p1p2: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepStats {
    pub cells: Vec<SweepCell>,
    pub runs: Vec<SweepRun>,
}

impl SweepStats {
    pub fn cell(&self, table: usize, beta: Beta) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.table == table && c.beta == beta)
    }
}

/// Runs every table × β × (δ, α, κ) × seed combination.
///
/// Seed `s` uses `derive_seed(root_seed, s)` for its initial attractions,
/// shared across tables and parameters. Runs execute on the current rayon
/// pool; results are collected in job order and reduced sequentially, so
/// the output does not depend on the number of threads.
pub fn sweep(grid: &SweepGrid, tables: &[PayoffTable], root_seed: u64) -> Result<SweepStats> {
    grid.validate()?;
    if tables.is_empty() {
        return Err(Error::arg("sweep needs at least one payoff table"));
    }
    let seeds: Vec<u64> = (0..grid.n_seeds as u64).map(|s| derive_seed(root_seed, s)).collect();

    let mut jobs = Vec::new();
    for (ti, _) in tables.iter().enumerate() {
        for &beta in &grid.betas {
            for params in grid.combinations(beta) {
                for &seed in &seeds {
                    jobs.push((ti, params, seed));
                }
            }
        }
    }

    let runs = jobs
        .par_iter()
        .map(|&(ti, params, seed)| {
            let traj = run_ewa(&params, &tables[ti], grid.rounds, seed)?;
            let last = traj.last().expect("rounds >= 1");
            Ok(SweepRun {
                table: ti,
                params,
                seed,
                p1: last.p_act(0),
                p2: last.p_act(1),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_cell = grid.n_seeds * grid.deltas.len() * grid.alphas.len() * grid.kappas.len();
    let mut cells = Vec::new();
    for (chunk_index, chunk) in runs.chunks(per_cell).enumerate() {
        let table_index = chunk_index / grid.betas.len();
        let beta = grid.betas[chunk_index % grid.betas.len()];
        let t = &tables[table_index];
        let n = chunk.len() as f64;
        let mean = chunk.iter().map(|r| r.p1 * r.p2).sum::<f64>() / n;
        let var = chunk.iter().map(|r| (r.p1 * r.p2 - mean).powi(2)).sum::<f64>() / n;
        cells.push(SweepCell {
            table: table_index,
            mechanism: t.mechanism,
            scenario_id: t.scenario_id.clone(),
            t_game_min: t.t_game_min,
            r_pct_per_min: t.r_pct_per_min,
            l_plus_g: t.l1 + t.g1,
            l_minus_g: t.l1 - t.g1,
            beta,
            mean_p1p2: mean,
            std_p1p2: var.sqrt(),
            runs: chunk.len(),
        });
    }
    Ok(SweepStats { cells, runs })
}

pub const SWEEP_TABLE_CSV_HEADER: &str =
    "mechanism,t_game_min,r_pct_per_min,l_plus_g,l_minus_g,beta_class,mean_p1p2,std_p1p2";
pub const SWEEP_SCATTER_CSV_HEADER: &str = "mechanism,scenario,delta,alpha,kappa,beta,seed,p1_final,p2_final";

pub fn write_sweep_table<W: Write>(mut w: W, stats: &SweepStats) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_TABLE_CSV_HEADER}")?;
    for c in &stats.cells {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            c.mechanism, c.t_game_min, c.r_pct_per_min, c.l_plus_g, c.l_minus_g, c.beta, c.mean_p1p2, c.std_p1p2
        )?;
    }
    Ok(())
}

pub fn write_sweep_scatter<W: Write>(mut w: W, stats: &SweepStats, tables: &[PayoffTable]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_SCATTER_CSV_HEADER}")?;
    for r in &stats.runs {
        let t = &tables[r.table];
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            t.mechanism, t.scenario_id, r.params.delta, r.params.alpha, r.params.kappa, r.params.beta, r.seed, r.p1, r.p2
        )?;
    }
    Ok(())
}
