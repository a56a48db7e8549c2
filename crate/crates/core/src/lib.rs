//! Simulation and analysis of the two-BRP smart balancing game.
//!
//! A linearized control area is driven by a power plant outage and by the
//! smart-balancing reactions of two balance responsible parties. Imbalances
//! are settled per ISP under German (single) and Dutch (combined) pricing,
//! the resulting gains and losses form a 2x2 game, and Experience-Weighted
//! Attraction learning estimates how often both parties end up reacting at
//! once, overcompensating the disturbance.
//!
//! Modules follow the pipeline:
//!
//! * [`grid_model`]: fixed-step simulation of the control area.
//! * [`scenario`]: outage and reaction profiles per strategy profile.
//! * [`pricing`]: energies, imbalance prices and settlement.
//! * [`game`]: payoff tables, Nash equilibria, risk dominance.
//! * [`ewa`]: learning dynamics and the parameter sweep.
//! * [`runner`]: config ingestion and artifact emission.

pub mod error;
pub mod ewa;
pub mod game;
pub mod grid_model;
pub mod pricing;
pub mod runner;
pub mod scenario;

pub use error::{Error, Result};
pub use ewa::{Beta, EwaParams, EwaState, SweepGrid, SweepStats, UpdateMode};
pub use game::{MixedProfile, PayoffTable};
pub use grid_model::{GridParams, InjectionProfile, SimTrace};
pub use pricing::Mechanism;
pub use runner::{ExperimentConfig, Manifest};
pub use scenario::{ScenarioConfig, StrategyProfile};
