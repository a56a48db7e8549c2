//! `smartbal` command line.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use smartbal_core::ewa::{run_ewa, write_trajectory};
use smartbal_core::game::ScenarioRuns;
use smartbal_core::runner::{
    equilibria_stage, payoff_stage, run_experiment, scenario_label, simulate_scenarios, sweep_stage, ArtifactWriter,
};
use smartbal_core::{
    Beta, Error, EwaParams, ExperimentConfig, Manifest, PayoffTable, ScenarioConfig, StrategyProfile, UpdateMode,
};

#[derive(Debug, Parser)]
#[command(name = "smartbal", version, about = "Smart balancing game: simulation, settlement and learning")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Experiment config (JSON); defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Root seed (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Analyse the built-in reference (g, l) rows instead of simulated tables.
    #[arg(long, global = true)]
    reference_tables: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario and strategy profile into a trace CSV.
    Simulate(SimulateArgs),
    /// Simulate and settle the scenario set into payoff tables.
    Payoffs,
    /// Nash equilibria, mixed strategies and risk dominance per table.
    Equilibria,
    /// A single learning trajectory.
    EwaRun(EwaRunArgs),
    /// The learning-parameter sweep.
    EwaSweep,
    /// The full pipeline.
    Reproduce,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario from the config, by index.
    #[arg(long, conflicts_with_all = ["t_game", "ramp"])]
    scenario: Option<usize>,
    /// Game start [min] for an ad-hoc symmetric scenario.
    #[arg(long)]
    t_game: Option<f64>,
    /// Ramp rate [%/min] for an ad-hoc symmetric scenario.
    #[arg(long)]
    ramp: Option<f64>,
    /// Strategy profile as `S1,S2`, e.g. `1,1`.
    #[arg(long, default_value = "1,1")]
    profile: String,
}

#[derive(Debug, Args)]
struct EwaRunArgs {
    /// Analysis table by index.
    #[arg(long, default_value_t = 0, conflicts_with_all = ["g", "l"])]
    table: usize,
    /// Symmetric gain for an ad-hoc table.
    #[arg(long, requires = "l")]
    g: Option<f64>,
    /// Symmetric loss for an ad-hoc table.
    #[arg(long, requires = "g")]
    l: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Intensity of choice; `inf` for best response.
    #[arg(long)]
    beta: Option<String>,
    /// `batch` or `expected`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
}

fn parse_profile(text: &str) -> Result<StrategyProfile, Error> {
    let bits: Vec<&str> = text.split(',').map(str::trim).collect();
    let parse = |s: &str| s.parse::<u8>().map_err(|_| Error::InvalidArgument(format!("bad profile `{text}`")));
    match bits.as_slice() {
        [a, b] => StrategyProfile::from_bits(parse(a)?, parse(b)?),
        _ => Err(Error::InvalidArgument(format!("profile must be `S1,S2`, got `{text}`"))),
    }
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &global.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = global.seed {
        cfg.root_seed = seed;
    }
    if global.reference_tables {
        cfg.use_reference_tables = true;
    }
    Ok(cfg)
}

fn analysis_tables(cfg: &ExperimentConfig, out: &mut ArtifactWriter) -> Result<Vec<PayoffTable>, Error> {
    Ok(payoff_stage(cfg, None, out)?.tables)
}

fn run_command(command: Command, cfg: ExperimentConfig) -> Result<Manifest, Error> {
    let mut out = ArtifactWriter::new(&cfg.output_dir)?;
    match command {
        Command::Simulate(args) => {
            let scenario = match (args.scenario, args.t_game, args.ramp) {
                (Some(i), _, _) => cfg
                    .scenarios
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("no scenario with index {i}")))?,
                (None, Some(t), Some(r)) => ScenarioConfig::symmetric(t, r),
                (None, None, None) => cfg.scenarios[0].clone(),
                _ => return Err(Error::InvalidArgument("--t-game and --ramp go together".into())),
            };
            let profile = parse_profile(&args.profile)?;
            let grid = cfg.grid.resolve()?;
            let runs = ScenarioRuns::simulate(&scenario, &grid, cfg.dt_s)?;
            let trace = runs.trace(profile);
            let rel = format!("trace_{}_S{}{}.csv", scenario_label(&scenario), profile.s1 as u8, profile.s2 as u8);
            let path = out.write(&rel, |w| trace.write_csv(w))?;
            println!("{}", path.display());
        }
        Command::Payoffs => {
            let cfg = ExperimentConfig { use_reference_tables: false, ..cfg.clone() };
            let runs = simulate_scenarios(&cfg)?;
            let tables = payoff_stage(&cfg, Some(&runs), &mut out)?;
            for t in &tables.tables {
                println!("{:<14} g = {:.3}  l = {:.3}  g/(g+l) = {:.2}", t.scenario_id, t.g1, t.l1, t.ratio(0));
            }
            for t in &tables.flagged {
                println!("{:<14} flagged: g = ({}, {}), l = ({}, {})", t.scenario_id, t.g1, t.g2, t.l1, t.l2);
            }
        }
        Command::Equilibria => {
            let tables = payoff_stage(&cfg, None, &mut out)?;
            for r in equilibria_stage(&tables, &mut out)? {
                let pure: Vec<String> = r.pure.iter().map(|p| p.to_string()).collect();
                let mixed = r.mixed.map(|m| format!("({:.4}, {:.4})", m.p1, m.p2)).unwrap_or_default();
                let risk = r.risk_dominant.map(|p| p.to_string()).unwrap_or_else(|| "none".into());
                println!("{:<14} pure {}  mixed {}  risk-dominant {}", r.scenario_id, pure.join(" "), mixed, risk);
            }
        }
        Command::EwaRun(args) => {
            let table = match (args.g, args.l) {
                (Some(g), Some(l)) => PayoffTable::from_values(g, g, l, l),
                _ => {
                    let tables = analysis_tables(&cfg, &mut out)?;
                    tables
                        .get(args.table)
                        .cloned()
                        .ok_or_else(|| Error::InvalidArgument(format!("no table with index {}", args.table)))?
                }
            };
            let base = cfg.trajectory.params;
            let mode = match args.mode.as_deref() {
                None => base.mode,
                Some("batch") => UpdateMode::BatchSample,
                Some("expected") => UpdateMode::Expected,
                Some(other) => return Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
            };
            let beta = match &args.beta {
                Some(b) => b.parse::<Beta>()?,
                None => base.beta,
            };
            let params = EwaParams {
                delta: args.delta.unwrap_or(base.delta),
                alpha: args.alpha.unwrap_or(base.alpha),
                kappa: args.kappa.unwrap_or(base.kappa),
                beta,
                batch_size: args.batch_size.unwrap_or(base.batch_size),
                mode,
            };
            let rounds = args.rounds.unwrap_or(cfg.trajectory.rounds);
            let seed = smartbal_core::ewa::derive_seed(cfg.root_seed, 0);
            let traj = run_ewa(&params, &table, rounds, seed)?;
            let path = out.write("trajectory.csv", |w| write_trajectory(w, &traj))?;
            let last = traj.last().expect("rounds >= 1");
            println!(
                "{}: final p1 = {:.4}, p2 = {:.4}, p1*p2 = {:.4} ({})",
                table.scenario_id,
                last.p_act(0),
                last.p_act(1),
                last.overreaction(),
                path.display()
            );
        }
        Command::EwaSweep => {
            let tables = analysis_tables(&cfg, &mut out)?;
            let stats = sweep_stage(&cfg, &tables, &mut out)?;
            for c in &stats.cells {
                println!(
                    "{:<14} beta {:<4} l+g {:.2} l-g {:+.2}  mean {:5.1} % (std {:4.1} %)",
                    c.scenario_id,
                    c.beta.to_string(),
                    c.l_plus_g,
                    c.l_minus_g,
                    100.0 * c.mean_p1p2,
                    100.0 * c.std_p1p2
                );
            }
        }
        Command::Reproduce => {
            let manifest = run_experiment(&cfg)?;
            println!("wrote {} files to {}", manifest.files.len(), cfg.output_dir.display());
            return Ok(manifest);
        }
    }
    out.finish(&cfg)
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code: 0 on success, 1 on a failed run, 2 on usage errors.
pub fn cli_entry<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match load_config(&cli.global) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let run = || run_command(cli.command, cfg);
    let result = match cli.global.jobs {
        Some(0) => Err(Error::InvalidArgument("--jobs must be >= 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(Error::InvalidArgument(format!("cannot start {n} workers: {e}"))),
        },
        None => run(),
    };
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}
