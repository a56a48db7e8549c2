//! Per-ISP energy accounting, price formation and imbalance settlement.
//!
//! Prices scale linearly with the requested FRR power, so they carry MWh
//! (DE, volume integral) or MW·0.25 h (NL, scaled extremum) units. Only
//! relative payoffs matter downstream.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_model::{InjectionProfile, Signal, SimTrace};

/// Default tolerance for counter-activation and monotonicity checks [MW].
pub const DEFAULT_DUAL_TOL_MW: f64 = 1.0;

/// NL prices scale the extremum of the FRR request to one ISP [h].
const NL_PRICE_HOURS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mechanism {
    /// Single pricing on the volume integral of the FRR request.
    DE,
    /// Combined pricing on the FRR extremum, dual on non-monotone counter-activation.
    NL,
}

impl Mechanism {
    pub const ALL: [Mechanism; 2] = [Mechanism::DE, Mechanism::NL];
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::DE => "DE",
            Mechanism::NL => "NL",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DE" => Ok(Mechanism::DE),
            "NL" => Ok(Mechanism::NL),
            _ => Err(Error::arg(format!("unknown pricing mechanism `{s}` (DE or NL)"))),
        }
    }
}

/// Settlement window in minutes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IspWindow {
    pub start: f64,
    pub end: f64,
}

impl IspWindow {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::arg(format!("invalid ISP window [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    /// Consecutive windows covering `[0, horizon]`.
    pub fn grid(horizon: f64, isp_minutes: f64) -> Vec<Self> {
        let n = (horizon / isp_minutes).round() as usize;
        (0..n)
            .map(|i| Self {
                start: i as f64 * isp_minutes,
                end: (i + 1) as f64 * isp_minutes,
            })
            .collect()
    }

    pub fn hours(&self) -> f64 {
        (self.end - self.start) / 60.0
    }
}

/// Inclusive sample index range of `window` within `trace`.
fn window_range(trace: &SimTrace, window: &IspWindow) -> Result<(usize, usize)> {
    let per_min = 60.0 / trace.dt;
    let to_index = |t: f64| -> Result<usize> {
        let f = t * per_min;
        let i = f.round();
        if (f - i).abs() > 1e-6 || i < 0.0 {
            return Err(Error::arg(format!("window edge {t} min is not on the sample grid")));
        }
        Ok(i as usize)
    };
    let (a, b) = (to_index(window.start)?, to_index(window.end)?);
    if b >= trace.len() || a >= b {
        return Err(Error::arg(format!(
            "window [{}, {}] min outside trace horizon {} min",
            window.start,
            window.end,
            trace.horizon_min()
        )));
    }
    Ok((a, b))
}

/// Trapezoidal integral of uniformly spaced samples.
pub fn trapezoid(values: &[f64], dt_h: f64) -> f64 {
    values.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() * dt_h
}

/// Integral of `max(x, 0)` over the linear interpolant of the samples.
pub fn positive_part_integral(values: &[f64], dt_h: f64) -> f64 {
    values
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            if a >= 0.0 && b >= 0.0 {
                0.5 * (a + b)
            } else if a <= 0.0 && b <= 0.0 {
                0.0
            } else {
                let hi = a.max(b);
                0.5 * hi * hi / (a.abs() + b.abs())
            }
        })
        .sum::<f64>()
        * dt_h
}

/// Integral of `min(x, 0)` over the linear interpolant of the samples.
pub fn negative_part_integral(values: &[f64], dt_h: f64) -> f64 {
    let negated: Vec<f64> = values.iter().map(|v| -v).collect();
    0.0 - positive_part_integral(&negated, dt_h)
}

fn window_series(trace: &SimTrace, signal: Signal, window: &IspWindow) -> Result<Vec<f64>> {
    let (a, b) = window_range(trace, window)?;
    Ok(trace.samples[a..=b].iter().map(|s| signal.of(s)).collect())
}

/// Energy of `signal` over `window` [MWh].
pub fn energy(trace: &SimTrace, signal: Signal, window: &IspWindow) -> Result<f64> {
    let v = window_series(trace, signal, window)?;
    Ok(trapezoid(&v, trace.dt / 3600.0))
}

/// Energy of an injection profile sampled on the trace grid [MWh].
pub fn profile_energy(trace: &SimTrace, profile: &InjectionProfile, window: &IspWindow) -> Result<f64> {
    let (a, b) = window_range(trace, window)?;
    let v: Vec<f64> = (a..=b).map(|i| profile.value_at(trace.time_min(i))).collect();
    Ok(trapezoid(&v, trace.dt / 3600.0))
}

/// `(C+, C-)` from a sampled FRR request.
pub fn price_bounds_from_series(frr: &[f64], dt_h: f64, mechanism: Mechanism) -> (f64, f64) {
    match mechanism {
        Mechanism::DE => (positive_part_integral(frr, dt_h), negative_part_integral(frr, dt_h)),
        Mechanism::NL => {
            let max = frr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = frr.iter().copied().fold(f64::INFINITY, f64::min);
            (NL_PRICE_HOURS * max, NL_PRICE_HOURS * min)
        }
    }
}

pub fn price_bounds(trace: &SimTrace, window: &IspWindow, mechanism: Mechanism) -> Result<(f64, f64)> {
    let frr = window_series(trace, Signal::FrrRequested, window)?;
    Ok(price_bounds_from_series(&frr, trace.dt / 3600.0, mechanism))
}

/// Counter-activation (both signs beyond `tol`) with a non-monotone course:
/// the series both rises and falls by more than `tol` somewhere.
pub fn is_dual_pricing_case(frr: &[f64], tol: f64) -> bool {
    let max = frr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = frr.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > tol && min < -tol) {
        return false;
    }
    let (mut run_min, mut run_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut rise, mut fall) = (0.0_f64, 0.0_f64);
    for &v in frr {
        run_min = run_min.min(v);
        run_max = run_max.max(v);
        rise = rise.max(v - run_min);
        fall = fall.max(run_max - v);
    }
    rise > tol && fall > tol
}

pub fn detect_dual(trace: &SimTrace, window: &IspWindow, tol: f64) -> Result<bool> {
    let frr = window_series(trace, Signal::FrrRequested, window)?;
    Ok(is_dual_pricing_case(&frr, tol))
}

/// Price and payoff of one BRP in one ISP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrpSettlement {
    pub price: f64,
    pub payoff: f64,
}

/// Settles an imbalance `e_b`. `dual` is ignored under DE.
pub fn settle(e_b: f64, e_frr: f64, c_pos: f64, c_neg: f64, mechanism: Mechanism, dual: bool) -> BrpSettlement {
    let single = if e_frr > 0.0 {
        c_pos
    } else if e_frr < 0.0 {
        c_neg
    } else {
        0.0
    };
    let price = match (mechanism, dual) {
        (Mechanism::NL, true) => {
            if e_b > 0.0 {
                c_neg
            } else if e_b < 0.0 {
                c_pos
            } else {
                0.0
            }
        }
        _ => single,
    };
    BrpSettlement { price, payoff: price * e_b }
}

/// One ISP of a settled scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    pub isp: usize,
    pub e_b: [f64; 2],
    pub e_frr: f64,
    pub c_pos: f64,
    pub c_neg: f64,
    pub price_applied: [f64; 2],
    pub dual_applied: bool,
    pub payoff: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSettlement {
    pub mechanism: Mechanism,
    pub isps: Vec<Settlement>,
    pub totals: [f64; 2],
}

/// Settles every ISP of `trace`; `reactions[b]` is the deviation BRP `b`
/// actually injected (zero when not acting).
pub fn scenario_payoffs(
    trace: &SimTrace,
    reactions: &[InjectionProfile; 2],
    mechanism: Mechanism,
    isp_minutes: f64,
    dual_tol: f64,
) -> Result<ScenarioSettlement> {
    let windows = IspWindow::grid(trace.horizon_min(), isp_minutes);
    if windows.is_empty() {
        return Err(Error::arg("trace shorter than one ISP"));
    }
    let dt_h = trace.dt / 3600.0;
    let mut isps = Vec::with_capacity(windows.len());
    let mut totals = [0.0; 2];
    for (isp, w) in windows.iter().enumerate() {
        let frr = window_series(trace, Signal::FrrRequested, w)?;
        let e_frr = trapezoid(&frr, dt_h);
        let (c_pos, c_neg) = price_bounds_from_series(&frr, dt_h, mechanism);
        let dual = mechanism == Mechanism::NL && is_dual_pricing_case(&frr, dual_tol);
        let mut e_b = [0.0; 2];
        let mut price_applied = [0.0; 2];
        let mut payoff = [0.0; 2];
        for b in 0..2 {
            e_b[b] = profile_energy(trace, &reactions[b], w)?;
            let s = settle(e_b[b], e_frr, c_pos, c_neg, mechanism, dual);
            price_applied[b] = s.price;
            payoff[b] = s.payoff;
            totals[b] += s.payoff;
        }
        isps.push(Settlement {
            isp: isp + 1,
            e_b,
            e_frr,
            c_pos,
            c_neg,
            price_applied,
            dual_applied: dual,
            payoff,
        });
    }
    Ok(ScenarioSettlement { mechanism, isps, totals })
}

pub const SETTLEMENT_CSV_HEADER: &str = "scenario,mechanism,isp,e_b1,e_b2,e_frr,c_pos,c_neg,dual,pi_1,pi_2";

pub fn write_settlement_rows<W: Write>(
    mut w: W,
    scenario: &str,
    settled: &ScenarioSettlement,
) -> std::io::Result<()> {
    for s in &settled.isps {
        writeln!(
            w,
            "{scenario},{},{},{},{},{},{},{},{},{},{}",
            settled.mechanism,
            s.isp,
            s.e_b[0],
            s.e_b[1],
            s.e_frr,
            s.c_pos,
            s.c_neg,
            s.dual_applied,
            s.payoff[0],
            s.payoff[1]
        )?;
    }
    Ok(())
}
