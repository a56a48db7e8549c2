//! Disturbance and smart-balancing reaction profiles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_model::InjectionProfile;

/// How one BRP reacts once the game becomes playable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSpec {
    /// Time the game becomes playable [min].
    pub t_game: f64,
    /// Ramp-rate limit [%/min of `p_b_max`].
    pub ramp_pct_per_min: f64,
    /// Asset capacity used for smart balancing [MW].
    pub p_b_max: f64,
}

impl ReactionSpec {
    /// Ramp slope [MW/min].
    pub fn slope(&self) -> f64 {
        self.ramp_pct_per_min / 100.0 * self.p_b_max
    }
}

fn default_outage_mw() -> f64 {
    -200.0
}
fn default_p_b_max() -> f64 {
    150.0
}
fn default_horizon() -> f64 {
    30.0
}
fn default_isp_minutes() -> f64 {
    15.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Baseline disturbance [MW], negative for a shortage.
    #[serde(default = "default_outage_mw")]
    pub outage_mw: f64,
    #[serde(default)]
    pub outage_time: f64,
    pub t_game: f64,
    pub ramp_pct_per_min: f64,
    #[serde(default = "default_p_b_max")]
    pub p_b_max: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_isp_minutes")]
    pub isp_minutes: f64,
    /// Per-BRP overrides for asymmetric games; `None` uses the shared reaction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brp1: Option<ReactionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brp2: Option<ReactionSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::symmetric(1.0, 400.0)
    }
}

impl ScenarioConfig {
    /// Symmetric scenario with the default outage and asset size.
    pub fn symmetric(t_game: f64, ramp_pct_per_min: f64) -> Self {
        Self {
            outage_mw: default_outage_mw(),
            outage_time: 0.0,
            t_game,
            ramp_pct_per_min,
            p_b_max: default_p_b_max(),
            horizon: default_horizon(),
            isp_minutes: default_isp_minutes(),
            brp1: None,
            brp2: None,
        }
    }

    /// The six (T_game, r) combinations of the reference study.
    pub fn reference_set() -> Vec<Self> {
        [(1.0, 400.0), (1.0, 20.0), (5.0, 400.0), (5.0, 20.0), (10.0, 400.0), (10.0, 20.0)]
            .into_iter()
            .map(|(t, r)| Self::symmetric(t, r))
            .collect()
    }

    pub fn shared_reaction(&self) -> ReactionSpec {
        ReactionSpec {
            t_game: self.t_game,
            ramp_pct_per_min: self.ramp_pct_per_min,
            p_b_max: self.p_b_max,
        }
    }

    /// Reaction of BRP `b` (0 or 1).
    pub fn reaction_for(&self, brp: usize) -> ReactionSpec {
        let over = if brp == 0 { self.brp1 } else { self.brp2 };
        over.unwrap_or_else(|| self.shared_reaction())
    }

    pub fn is_symmetric(&self) -> bool {
        self.reaction_for(0) == self.reaction_for(1)
    }

    pub fn isp_count(&self) -> usize {
        (self.horizon / self.isp_minutes).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.outage_mw,
            self.outage_time,
            self.t_game,
            self.ramp_pct_per_min,
            self.p_b_max,
            self.horizon,
            self.isp_minutes,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("scenario fields must be finite"));
        }
        if !(self.horizon > 0.0 && self.isp_minutes > 0.0) {
            return Err(Error::arg("horizon and isp_minutes must be > 0"));
        }
        let isps = self.horizon / self.isp_minutes;
        if (isps - isps.round()).abs() > 1e-9 || isps.round() < 1.0 {
            return Err(Error::arg(format!(
                "horizon {} min is not an integer multiple of the {} min ISP",
                self.horizon, self.isp_minutes
            )));
        }
        if self.outage_time < 0.0 {
            return Err(Error::arg("outage_time must be >= 0"));
        }
        for brp in 0..2 {
            let r = self.reaction_for(brp);
            if !(r.t_game >= 0.0 && r.t_game < self.horizon) {
                return Err(Error::arg(format!(
                    "t_game {} must lie in [0, horizon {})",
                    r.t_game, self.horizon
                )));
            }
            if !(r.ramp_pct_per_min > 0.0) {
                return Err(Error::arg("ramp_pct_per_min must be > 0"));
            }
            if !(r.p_b_max > 0.0) {
                return Err(Error::arg("p_b_max must be > 0"));
            }
        }
        Ok(())
    }

    /// Identifier such as `DE_T1_r400`.
    pub fn id(&self, mechanism: impl fmt::Display) -> String {
        format!("{mechanism}_T{}_r{}", self.t_game, self.ramp_pct_per_min)
    }
}

/// Pure strategy of both BRPs: `true` means smart balancing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrategyProfile {
    pub s1: bool,
    pub s2: bool,
}

impl StrategyProfile {
    pub const NONE: Self = Self { s1: false, s2: false };
    pub const FIRST: Self = Self { s1: true, s2: false };
    pub const SECOND: Self = Self { s1: false, s2: true };
    pub const BOTH: Self = Self { s1: true, s2: true };
    pub const ALL: [Self; 4] = [Self::NONE, Self::SECOND, Self::FIRST, Self::BOTH];

    pub fn new(s1: bool, s2: bool) -> Self {
        Self { s1, s2 }
    }

    pub fn from_bits(s1: u8, s2: u8) -> Result<Self> {
        match (s1, s2) {
            (0 | 1, 0 | 1) => Ok(Self::new(s1 == 1, s2 == 1)),
            _ => Err(Error::arg(format!("strategies must be 0 or 1, got ({s1}, {s2})"))),
        }
    }

    pub fn get(&self, brp: usize) -> bool {
        if brp == 0 {
            self.s1
        } else {
            self.s2
        }
    }

    pub fn acting(&self) -> usize {
        self.s1 as usize + self.s2 as usize
    }
}

impl fmt::Display for StrategyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.s1 as u8, self.s2 as u8)
    }
}

pub fn outage_profile(cfg: &ScenarioConfig) -> InjectionProfile {
    if cfg.outage_mw == 0.0 {
        return InjectionProfile::zero();
    }
    InjectionProfile::new(vec![(cfg.outage_time, cfg.outage_mw)])
        .expect("single finite breakpoint")
}

/// Ramp from zero at `t_game` to `p_b_max` at the limited slope, then hold.
pub fn reaction_from_spec(spec: &ReactionSpec) -> InjectionProfile {
    let ramp_minutes = spec.p_b_max / spec.slope();
    let end = spec.t_game + ramp_minutes;
    let bps = if ramp_minutes.is_finite() && end > spec.t_game {
        vec![(spec.t_game, 0.0), (end, spec.p_b_max)]
    } else {
        vec![(spec.t_game, spec.p_b_max)]
    };
    InjectionProfile::new(bps).expect("ramp breakpoints are ordered")
}

/// Shared (BRP 1) reaction profile of the scenario.
pub fn reaction_profile(cfg: &ScenarioConfig) -> InjectionProfile {
    reaction_from_spec(&cfg.reaction_for(0))
}

/// Per-BRP reaction each BRP would inject when acting.
pub fn brp_reactions(cfg: &ScenarioConfig) -> [InjectionProfile; 2] {
    [reaction_from_spec(&cfg.reaction_for(0)), reaction_from_spec(&cfg.reaction_for(1))]
}

/// `[P_d, S_1·P_1, S_2·P_2]`.
pub fn assemble_inputs(cfg: &ScenarioConfig, profile: StrategyProfile) -> Vec<InjectionProfile> {
    let reactions = brp_reactions(cfg);
    let mut out = vec![outage_profile(cfg)];
    for (b, r) in reactions.into_iter().enumerate() {
        out.push(if profile.get(b) { r } else { InjectionProfile::zero() });
    }
    out
}
