//! The 2x2 smart balancing game: payoff tables, Nash equilibria and
//! equilibrium selection.
//!
//! Strategy 1 is smart balancing, strategy 0 is staying on schedule.
//!
//! ```text
//!                 S2 = 0       S2 = 1
//!     S1 = 0     (0, 0)       (0, g2)
//!     S1 = 1     (g1, 0)      (-l1, -l2)
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_model::{simulate, GridParams, SimTrace};
use crate::pricing::{scenario_payoffs, Mechanism, ScenarioSettlement};
use crate::scenario::{assemble_inputs, brp_reactions, ScenarioConfig, StrategyProfile};
use crate::grid_model::InjectionProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffTable {
    pub scenario_id: String,
    pub mechanism: Mechanism,
    pub t_game_min: f64,
    pub r_pct_per_min: f64,
    pub g1: f64,
    pub g2: f64,
    /// Losses are stored positive.
    pub l1: f64,
    pub l2: f64,
}

impl PayoffTable {
    pub fn symmetric(mechanism: Mechanism, t_game_min: f64, r_pct_per_min: f64, g: f64, l: f64) -> Self {
        Self {
            scenario_id: format!("{mechanism}_T{t_game_min}_r{r_pct_per_min}"),
            mechanism,
            t_game_min,
            r_pct_per_min,
            g1: g,
            g2: g,
            l1: l,
            l2: l,
        }
    }

    /// Bare table for analysis, without scenario metadata.
    pub fn from_values(g1: f64, g2: f64, l1: f64, l2: f64) -> Self {
        Self {
            scenario_id: String::from("custom"),
            mechanism: Mechanism::DE,
            t_game_min: 0.0,
            r_pct_per_min: 0.0,
            g1,
            g2,
            l1,
            l2,
        }
    }

    pub fn gain(&self, brp: usize) -> f64 {
        if brp == 0 {
            self.g1
        } else {
            self.g2
        }
    }

    pub fn loss(&self, brp: usize) -> f64 {
        if brp == 0 {
            self.l1
        } else {
            self.l2
        }
    }

    /// Payoff of `brp` when it plays `own` and its opponent plays `other`.
    pub fn payoff(&self, brp: usize, own: bool, other: bool) -> f64 {
        match (own, other) {
            (false, _) => 0.0,
            (true, false) => self.gain(brp),
            (true, true) => -self.loss(brp),
        }
    }

    /// `g_b / (g_b + l_b)`.
    pub fn ratio(&self, brp: usize) -> f64 {
        self.gain(brp) / (self.gain(brp) + self.loss(brp))
    }

    pub fn is_symmetric(&self) -> bool {
        self.g1 == self.g2 && self.l1 == self.l2
    }

    pub fn is_well_formed(&self) -> bool {
        [self.g1, self.g2, self.l1, self.l2].iter().all(|v| v.is_finite() && *v > 0.0)
    }

    pub fn check(&self) -> Result<()> {
        if self.is_well_formed() {
            Ok(())
        } else {
            Err(Error::MalformedTable {
                id: self.scenario_id.clone(),
                reason: format!(
                    "expected g, l > 0, got g = ({}, {}), l = ({}, {})",
                    self.g1, self.g2, self.l1, self.l2
                ),
            })
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            g1: self.g1 * factor,
            g2: self.g2 * factor,
            l1: self.l1 * factor,
            l2: self.l2 * factor,
            ..self.clone()
        }
    }
}

/// Normalized (g, l) of the twelve symmetric reference scenarios, DE rows
/// first, each ordered (1, 400), (1, 20), (5, 400), (5, 20), (10, 400), (10, 20).
pub fn reference_tables() -> Vec<PayoffTable> {
    const ROWS: [(Mechanism, f64, f64, f64, f64); 12] = [
        (Mechanism::DE, 1.0, 400.0, 0.28, 0.44),
        (Mechanism::DE, 1.0, 20.0, 0.31, 0.35),
        (Mechanism::DE, 5.0, 400.0, 0.32, 0.19),
        (Mechanism::DE, 5.0, 20.0, 0.32, 0.15),
        (Mechanism::DE, 10.0, 400.0, 0.30, 0.13),
        (Mechanism::DE, 10.0, 20.0, 0.27, 0.11),
        (Mechanism::NL, 1.0, 400.0, 0.30, 0.55),
        (Mechanism::NL, 1.0, 20.0, 0.37, 0.48),
        (Mechanism::NL, 5.0, 400.0, 0.45, 0.44),
        (Mechanism::NL, 5.0, 20.0, 0.42, 0.37),
        (Mechanism::NL, 10.0, 400.0, 0.43, 0.30),
        (Mechanism::NL, 10.0, 20.0, 0.45, 0.19),
    ];
    ROWS.iter()
        .map(|&(m, t, r, g, l)| PayoffTable::symmetric(m, t, r, g, l))
        .collect()
}

/// The four simulated strategy profiles of one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioRuns {
    pub config: ScenarioConfig,
    /// Traces indexed like [`StrategyProfile::ALL`].
    pub traces: Vec<(StrategyProfile, SimTrace)>,
    reactions: [InjectionProfile; 2],
}

impl ScenarioRuns {
    pub fn simulate(cfg: &ScenarioConfig, grid: &GridParams, dt: f64) -> Result<Self> {
        cfg.validate()?;
        let traces = StrategyProfile::ALL
            .iter()
            .map(|&p| Ok((p, simulate(grid, &assemble_inputs(cfg, p), cfg.horizon, dt)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: cfg.clone(),
            traces,
            reactions: brp_reactions(cfg),
        })
    }

    pub fn trace(&self, profile: StrategyProfile) -> &SimTrace {
        &self
            .traces
            .iter()
            .find(|(p, _)| *p == profile)
            .expect("all four profiles are simulated")
            .1
    }

    pub fn settle(&self, profile: StrategyProfile, mechanism: Mechanism, dual_tol: f64) -> Result<ScenarioSettlement> {
        let acting = [0, 1].map(|b| {
            if profile.get(b) {
                self.reactions[b].clone()
            } else {
                InjectionProfile::zero()
            }
        });
        scenario_payoffs(self.trace(profile), &acting, mechanism, self.config.isp_minutes, dual_tol)
    }

    /// Builds the table; malformed results are returned as-is and can be
    /// detected with [`PayoffTable::is_well_formed`].
    pub fn table(&self, mechanism: Mechanism, dual_tol: f64) -> Result<PayoffTable> {
        let first = self.settle(StrategyProfile::FIRST, mechanism, dual_tol)?;
        let second = self.settle(StrategyProfile::SECOND, mechanism, dual_tol)?;
        let both = self.settle(StrategyProfile::BOTH, mechanism, dual_tol)?;
        Ok(PayoffTable {
            scenario_id: self.config.id(mechanism),
            mechanism,
            t_game_min: self.config.t_game,
            r_pct_per_min: self.config.ramp_pct_per_min,
            g1: first.totals[0],
            g2: second.totals[1],
            l1: -both.totals[0],
            l2: -both.totals[1],
        })
    }
}

pub fn build_payoff_table(
    cfg: &ScenarioConfig,
    mechanism: Mechanism,
    grid: &GridParams,
    dt: f64,
    dual_tol: f64,
) -> Result<PayoffTable> {
    ScenarioRuns::simulate(cfg, grid, dt)?.table(mechanism, dual_tol)
}

/// Divides every g and l by `max(g) + max(l)` taken over the whole set.
pub fn normalize_tables(tables: &[PayoffTable]) -> Result<Vec<PayoffTable>> {
    if tables.is_empty() {
        return Err(Error::arg("cannot normalize an empty table set"));
    }
    for t in tables {
        t.check()?;
    }
    let max_g = tables.iter().flat_map(|t| [t.g1, t.g2]).fold(f64::MIN, f64::max);
    let max_l = tables.iter().flat_map(|t| [t.l1, t.l2]).fold(f64::MIN, f64::max);
    let scale = 1.0 / (max_g + max_l);
    Ok(tables.iter().map(|t| t.scaled(scale)).collect())
}

/// Pure equilibria, read off the sign conditions of the 2x2 matrix.
pub fn pure_nash(table: &PayoffTable) -> Vec<StrategyProfile> {
    let (g1, g2, l1, l2) = (table.g1, table.g2, table.l1, table.l2);
    let mut out = Vec::new();
    if g1 <= 0.0 && g2 <= 0.0 {
        out.push(StrategyProfile::NONE);
    }
    if g2 >= 0.0 && l1 >= 0.0 {
        out.push(StrategyProfile::SECOND);
    }
    if g1 >= 0.0 && l2 >= 0.0 {
        out.push(StrategyProfile::FIRST);
    }
    if l1 <= 0.0 && l2 <= 0.0 {
        out.push(StrategyProfile::BOTH);
    }
    out
}

/// Probabilities that each BRP plays smart balancing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedProfile {
    pub p1: f64,
    pub p2: f64,
}

impl MixedProfile {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        if !((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p2)) {
            return Err(Error::arg(format!("probabilities ({p1}, {p2}) outside [0, 1]")));
        }
        Ok(Self { p1, p2 })
    }

    pub fn from_pure(profile: StrategyProfile) -> Self {
        Self {
            p1: profile.s1 as u8 as f64,
            p2: profile.s2 as u8 as f64,
        }
    }
}

/// Each BRP mixes so that its opponent is indifferent.
pub fn mixed_nash(table: &PayoffTable) -> Result<MixedProfile> {
    for b in 0..2 {
        if table.gain(b) + table.loss(b) == 0.0 {
            return Err(Error::DegenerateGame(format!(
                "g{0} + l{0} = 0 in {1}",
                b + 1,
                table.scenario_id
            )));
        }
    }
    Ok(MixedProfile {
        p1: table.ratio(1),
        p2: table.ratio(0),
    })
}

/// Probability that both BRPs act in the same ISP.
pub fn overreaction_probability(profile: &MixedProfile) -> f64 {
    profile.p1 * profile.p2
}

/// The pure equilibrium with the smaller strategic risk, `None` on a tie.
pub fn risk_dominant(table: &PayoffTable) -> Option<StrategyProfile> {
    // g1/(g1+l1) vs g2/(g2+l2), cross-multiplied
    let lhs = table.g1 * table.l2;
    let rhs = table.g2 * table.l1;
    if lhs > rhs {
        Some(StrategyProfile::FIRST)
    } else if lhs < rhs {
        Some(StrategyProfile::SECOND)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub scenario_id: String,
    pub mechanism: Mechanism,
    pub well_formed: bool,
    pub pure: Vec<StrategyProfile>,
    pub mixed: Option<MixedProfile>,
    pub risk_dominant: Option<StrategyProfile>,
    pub note: &'static str,
}

impl EquilibriumReport {
    pub fn analyze(table: &PayoffTable) -> Self {
        let risk = risk_dominant(table);
        let note = if !table.is_well_formed() {
            "flagged: table lacks the g > 0, l > 0 structure"
        } else if risk.is_none() {
            "no risk-dominant equilibrium; a correlated equilibrium would need communication"
        } else {
            ""
        };
        Self {
            scenario_id: table.scenario_id.clone(),
            mechanism: table.mechanism,
            well_formed: table.is_well_formed(),
            pure: pure_nash(table),
            mixed: mixed_nash(table).ok(),
            risk_dominant: risk,
            note,
        }
    }
}

pub const TABLE_CSV_HEADER: &str = "mechanism,t_game_min,r_pct_per_min,g,l,g_over_gl";
pub const TABLE_LONG_CSV_HEADER: &str = "scenario,mechanism,t_game_min,r_pct_per_min,g1,g2,l1,l2,well_formed";
pub const EQUILIBRIA_CSV_HEADER: &str =
    "scenario,mechanism,well_formed,pure_ne,p1_mixed,p2_mixed,p_overreaction_mixed,risk_dominant,note";

/// Symmetric rows only; asymmetric tables belong in the long form.
pub fn write_symmetric_tables<W: Write>(mut w: W, tables: &[PayoffTable]) -> std::io::Result<()> {
    writeln!(w, "{TABLE_CSV_HEADER}")?;
    for t in tables.iter().filter(|t| t.is_symmetric()) {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.mechanism,
            t.t_game_min,
            t.r_pct_per_min,
            t.g1,
            t.l1,
            t.ratio(0)
        )?;
    }
    Ok(())
}

pub fn write_long_tables<W: Write>(mut w: W, tables: &[PayoffTable]) -> std::io::Result<()> {
    writeln!(w, "{TABLE_LONG_CSV_HEADER}")?;
    for t in tables {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            t.scenario_id,
            t.mechanism,
            t.t_game_min,
            t.r_pct_per_min,
            t.g1,
            t.g2,
            t.l1,
            t.l2,
            t.is_well_formed()
        )?;
    }
    Ok(())
}

pub fn write_equilibria<W: Write>(mut w: W, reports: &[EquilibriumReport]) -> std::io::Result<()> {
    writeln!(w, "{EQUILIBRIA_CSV_HEADER}")?;
    for r in reports {
        let pure: Vec<String> = r.pure.iter().map(|p| p.to_string()).collect();
        let (p1, p2, over) = match r.mixed {
            Some(m) => (m.p1.to_string(), m.p2.to_string(), overreaction_probability(&m).to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let risk = r.risk_dominant.map(|p| p.to_string()).unwrap_or_else(|| "none".into());
        writeln!(
            w,
            "{},{},{},\"{}\",{},{},{},\"{}\",\"{}\"",
            r.scenario_id,
            r.mechanism,
            r.well_formed,
            pure.join(" "),
            p1,
            p2,
            over,
            risk,
            r.note
        )?;
    }
    Ok(())
}
