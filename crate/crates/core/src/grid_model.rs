//! Linearized single-busbar control area.
//!
//! The area is closed by four states: the per-unit frequency deviation driven
//! by the swing equation, the lagged FCR output, the integral of the frequency
//! deviation feeding the secondary (aFRR) PI controller, and the lagged aFRR
//! activation. All schedule deviations enter through [`InjectionProfile`]s,
//! summed into the area control error.
//!
//! ```text
//!   dΔf/dt   = (P_ace + P_fcr + P_sr + P_act) / (T_G · P_base)        [p.u./s]
//!   dP_fcr/dt = (-K_FCR · f_n · Δf - P_fcr) / t_fcr_act
//!   dI/dt    = Δf
//!   P_req    = -(K_aFRR · Δf + I / T_aFRR) · P_base
//!   dP_act/dt = (P_req - P_act) / t_afrr_act
//!   P_sr     = -K_L · f_n · Δf
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the built-in parameter profile.
pub const DEFAULT_GRID_PROFILE: &str = "de_control_block";

/// Dynamic constants of the control area.
///
/// The `de_control_block` defaults are calibration placeholders sized for a
/// large synchronous block; they are not measured values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    /// System inertia time constant T_G [s].
    pub t_inertia: f64,
    /// Power base of the swing equation [MW].
    pub p_base: f64,
    /// FCR gain [MW/Hz].
    pub k_fcr: f64,
    /// First-order FCR activation lag [s].
    pub t_fcr_act: f64,
    /// Self-regulating effect of the load [MW/Hz].
    pub k_load: f64,
    /// Proportional gain of the secondary controller [-].
    pub k_afrr: f64,
    /// Integral time of the secondary controller [s].
    pub t_afrr: f64,
    /// First-order aFRR activation lag [s].
    pub t_afrr_act: f64,
    /// Nominal frequency [Hz]; converts the per-unit deviation to Hz.
    pub f_nominal: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self::de_control_block()
    }
}

impl GridParams {
    pub fn de_control_block() -> Self {
        Self {
            t_inertia: 10.0,
            p_base: 80_000.0,
            k_fcr: 1_500.0,
            t_fcr_act: 30.0,
            k_load: 1_500.0,
            k_afrr: 0.5,
            t_afrr: 120.0,
            t_afrr_act: 60.0,
            f_nominal: 50.0,
        }
    }

    /// Looks up a named parameter profile.
    pub fn from_profile(name: &str) -> Result<Self> {
        match name {
            DEFAULT_GRID_PROFILE => Ok(Self::de_control_block()),
            other => Err(Error::InvalidGridParams(format!(
                "unknown grid profile `{other}` (available: {DEFAULT_GRID_PROFILE})"
            ))),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let params: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_inertia", self.t_inertia),
            ("p_base", self.p_base),
            ("t_fcr_act", self.t_fcr_act),
            ("t_afrr", self.t_afrr),
            ("t_afrr_act", self.t_afrr_act),
            ("f_nominal", self.f_nominal),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGridParams(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("k_fcr", self.k_fcr),
            ("k_load", self.k_load),
            ("k_afrr", self.k_afrr),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidGridParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Smallest time constant of the closed loop [s].
    pub fn min_time_constant(&self) -> f64 {
        [self.t_inertia, self.t_fcr_act, self.t_afrr, self.t_afrr_act]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest step the explicit integrator accepts [s].
    pub fn max_stable_dt(&self) -> f64 {
        self.min_time_constant() / 5.0
    }
}

/// Piecewise-linear schedule deviation.
///
/// Zero before the first breakpoint, linear between breakpoints, constant
/// after the last. A first breakpoint with nonzero power is a step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InjectionProfile {
    breakpoints: Vec<(f64, f64)>,
}

impl InjectionProfile {
    /// `breakpoints` are `(time [min], power [MW])` with strictly increasing times.
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        for &(t, p) in &breakpoints {
            if !t.is_finite() || !p.is_finite() {
                return Err(Error::arg(format!("non-finite breakpoint ({t}, {p})")));
            }
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::arg("breakpoint times must be strictly increasing"));
        }
        Ok(Self { breakpoints })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn is_zero(&self) -> bool {
        self.breakpoints.iter().all(|&(_, p)| p == 0.0)
    }

    /// Right-continuous value at `t_min`.
    pub fn value_at(&self, t_min: f64) -> f64 {
        let bps = &self.breakpoints;
        let Some(&(t0, _)) = bps.first() else {
            return 0.0;
        };
        if t_min < t0 {
            return 0.0;
        }
        // index of the last breakpoint with time <= t_min
        let i = bps.partition_point(|&(t, _)| t <= t_min) - 1;
        match bps.get(i + 1) {
            None => bps[i].1,
            Some(&(t1, p1)) => {
                let (ta, pa) = bps[i];
                pa + (p1 - pa) * (t_min - ta) / (t1 - ta)
            }
        }
    }

    /// Value approached from the left of `t_min`.
    pub fn left_limit(&self, t_min: f64) -> f64 {
        match self.breakpoints.first() {
            Some(&(t0, _)) if t_min <= t0 => 0.0,
            _ => self.value_at(t_min),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.iter().map(|&(t, p)| (t, p * factor)).collect(),
        }
    }

    /// Largest absolute slope between consecutive breakpoints [MW/min].
    pub fn max_slope(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }
}

/// One sampled instant of the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceSample {
    pub delta_f: f64,
    pub p_frr_requested: f64,
    pub p_frr_activated: f64,
    pub p_fcr: f64,
    pub p_selfreg: f64,
    pub p_ace: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    DeltaF,
    FrrRequested,
    FrrActivated,
    Fcr,
    SelfRegulation,
    Ace,
}

impl Signal {
    pub const ALL: [Signal; 6] = [
        Signal::DeltaF,
        Signal::FrrRequested,
        Signal::FrrActivated,
        Signal::Fcr,
        Signal::SelfRegulation,
        Signal::Ace,
    ];

    pub fn of(self, s: &TraceSample) -> f64 {
        match self {
            Signal::DeltaF => s.delta_f,
            Signal::FrrRequested => s.p_frr_requested,
            Signal::FrrActivated => s.p_frr_activated,
            Signal::Fcr => s.p_fcr,
            Signal::SelfRegulation => s.p_selfreg,
            Signal::Ace => s.p_ace,
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "t_min,delta_f_hz,p_frr_req_mw,p_frr_act_mw,p_fcr_mw,p_selfreg_mw,p_ace_mw";

/// Uniformly sampled simulation output, first sample at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    pub samples: Vec<TraceSample>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_min(&self, i: usize) -> f64 {
        i as f64 * self.dt / 60.0
    }

    pub fn horizon_min(&self) -> f64 {
        self.time_min(self.samples.len().saturating_sub(1))
    }

    pub fn times_min(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|i| self.time_min(i)).collect()
    }

    pub fn series(&self, signal: Signal) -> Vec<f64> {
        self.samples.iter().map(|s| signal.of(s)).collect()
    }

    pub fn last(&self) -> &TraceSample {
        self.samples.last().expect("trace always has the rest sample")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.time_min(i),
                s.delta_f,
                s.p_frr_requested,
                s.p_frr_activated,
                s.p_fcr,
                s.p_selfreg,
                s.p_ace
            )?;
        }
        Ok(())
    }
}

// [Δf (p.u.), P_fcr, ∫Δf dt, P_act]
type State = [f64; 4];

struct AreaDynamics<'a> {
    p: &'a GridParams,
}

impl AreaDynamics<'_> {
    fn frr_requested(&self, x: &State) -> f64 {
        -(self.p.k_afrr * x[0] + x[2] / self.p.t_afrr) * self.p.p_base
    }

    fn derivative(&self, x: &State, p_ace: f64) -> State {
        let p = self.p;
        let df_hz = x[0] * p.f_nominal;
        let selfreg = -p.k_load * df_hz;
        let net = p_ace + x[1] + selfreg + x[3];
        [
            net / (p.t_inertia * p.p_base),
            (-p.k_fcr * df_hz - x[1]) / p.t_fcr_act,
            x[0],
            (self.frr_requested(x) - x[3]) / p.t_afrr_act,
        ]
    }

    fn sample(&self, x: &State, p_ace: f64) -> TraceSample {
        let df_hz = x[0] * self.p.f_nominal;
        TraceSample {
            delta_f: df_hz,
            p_frr_requested: self.frr_requested(x),
            p_frr_activated: x[3],
            p_fcr: x[1],
            p_selfreg: -self.p.k_load * df_hz,
            p_ace,
        }
    }
}

fn axpy(x: &State, h: f64, k: &State) -> State {
    std::array::from_fn(|i| x[i] + h * k[i])
}

/// Simulates the control area over `horizon` minutes with step `dt` seconds.
///
/// Classical RK4; injections are evaluated from inside each step so a step
/// change placed on the sample grid is resolved without smearing.
pub fn simulate(
    params: &GridParams,
    injections: &[InjectionProfile],
    horizon: f64,
    dt: f64,
) -> Result<SimTrace> {
    params.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::arg(format!("dt must be > 0, got {dt}")));
    }
    if dt > params.max_stable_dt() + 1e-12 {
        return Err(Error::arg(format!(
            "dt = {dt} s exceeds the stability limit {} s (min time constant / 5)",
            params.max_stable_dt()
        )));
    }
    let horizon_s = horizon * 60.0;
    if !(horizon_s.is_finite() && horizon_s >= dt) {
        return Err(Error::arg(format!("horizon {horizon} min shorter than dt {dt} s")));
    }
    let steps_f = horizon_s / dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::arg(format!(
            "horizon {horizon} min is not a multiple of dt {dt} s"
        )));
    }

    let ace = |t_s: f64| injections.iter().map(|p| p.value_at(t_s / 60.0)).sum::<f64>();
    let ace_left = |t_s: f64| injections.iter().map(|p| p.left_limit(t_s / 60.0)).sum::<f64>();

    let dyn_ = AreaDynamics { p: params };
    let mut x: State = [0.0; 4];
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(dyn_.sample(&x, ace(0.0)));

    for step in 0..steps {
        let t = step as f64 * dt;
        let u0 = ace(t);
        let um = ace(t + 0.5 * dt);
        let u1 = ace_left(t + dt);
        let k1 = dyn_.derivative(&x, u0);
        let k2 = dyn_.derivative(&axpy(&x, 0.5 * dt, &k1), um);
        let k3 = dyn_.derivative(&axpy(&x, 0.5 * dt, &k2), um);
        let k4 = dyn_.derivative(&axpy(&x, dt, &k3), u1);
        for i in 0..4 {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable { step: step + 1, t_s: t + dt });
        }
        samples.push(dyn_.sample(&x, ace(t + dt)));
    }

    Ok(SimTrace { dt, samples })
}

/// Final value of the requested FRR for a constant net schedule deviation.
///
/// The integral action of the secondary controller removes any constant
/// deviation, so the request settles at its negative.
pub fn steady_state_frr(_params: &GridParams, net_schedule_deviation: f64) -> f64 {
    -net_schedule_deviation
}
