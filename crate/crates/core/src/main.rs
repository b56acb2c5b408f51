use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sisgame::config::{self, CompareConfig, ConfigError, ScenarioConfig, SweepConfig};
use sisgame::dynamics::{DynamicsError, Integration};
use sisgame::equilibrium::{find_equilibrium, reproduction_number, thresholds};
use sisgame::experiments::{
    compare_distributions, run_scenario, run_sweep, write_comparison_csv, write_sweep_csv,
    ExperimentError, Scenario,
};
use sisgame::nimfa::{
    build_abar, equivalence_check, integrate_nimfa, rank_one_radius, spectral_radius,
    DirectedWeightedGraph, NimfaError,
};
use sisgame::output::fmt_sig;

/// Default horizon of `nimfa-check` trajectory comparisons.
const NIMFA_HORIZON: f64 = 50.0;

#[derive(Parser)]
#[command(
    name = "sisgame",
    version,
    about = "Protection game on networked SIS epidemics"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(flatten)]
    flags: RunFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// Euler step size.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Integration horizon in time units.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Timescale separation of strategy revision.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Points per range grid.
    #[arg(long, global = true)]
    grid_points: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the coupled or switched dynamics of a scenario.
    Simulate { config: PathBuf },
    /// Print the stationary outcome of a scenario as JSON.
    Equilibrium { config: PathBuf },
    /// Sweep one parameter and tabulate the equilibrium.
    Sweep { config: PathBuf },
    /// Compare degree distributions over alpha, beta_P and c_P.
    CompareDist { config: PathBuf },
    /// Check the degree-level graph identities of a scenario.
    NimfaCheck {
        config: PathBuf,
        /// Edge list `i,j,weight` of an external graph to analyse as well.
        #[arg(long, requires = "recovery")]
        edges: Option<PathBuf>,
        /// Recovery-rate sidecar `i,recovery` for `--edges`.
        #[arg(long, requires = "edges")]
        recovery: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<NimfaError> for Failure {
    fn from(e: NimfaError) -> Self {
        match e {
            NimfaError::NotConverged { .. }
            | NimfaError::Dynamics(DynamicsError::NonFinite { .. }) => {
                Failure::Numerical(e.to_string())
            }
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command, &cli.flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(msg) | Failure::Numerical(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn load_scenario(path: &Path, flags: &RunFlags) -> Result<Scenario, Failure> {
    let cfg: ScenarioConfig = config::load(path)?;
    let mut s = cfg.build()?;
    apply_flags(&mut s, flags);
    Ok(s)
}

fn apply_flags(s: &mut Scenario, flags: &RunFlags) {
    if let Some(h) = flags.step {
        s.step = h;
    }
    if let Some(t) = flags.horizon {
        s.horizon = t;
    }
    if let Some(e) = flags.epsilon {
        s.params.epsilon = e;
    }
}

fn out_dir(flags: &RunFlags) -> Result<PathBuf, Failure> {
    let dir = flags.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(command: Command, flags: &RunFlags) -> Result<(), Failure> {
    match command {
        Command::Simulate { config } => simulate(&config, flags),
        Command::Equilibrium { config } => equilibrium(&config, flags),
        Command::Sweep { config } => sweep(&config, flags),
        Command::CompareDist { config } => compare(&config, flags),
        Command::NimfaCheck {
            config,
            edges,
            recovery,
        } => nimfa_check(&config, edges.zip(recovery), flags),
    }
}

fn simulate(path: &Path, flags: &RunFlags) -> Result<(), Failure> {
    let mut scenario = load_scenario(path, flags)?;
    if scenario.mode == sisgame::experiments::RunMode::Equilibrium {
        scenario.mode = sisgame::experiments::RunMode::Coupled;
    }
    let bundle = run_scenario(&scenario)?;
    match &flags.out {
        Some(dir) => {
            for f in bundle.write_to(dir)? {
                info!("wrote {}", f.display());
            }
        }
        // Without an output directory the trajectory itself goes to stdout.
        None => {
            if let Some(traj) = &bundle.trajectory {
                traj.write_csv(io::stdout().lock())
                    .map_err(|e| Failure::Config(e.to_string()))?;
            }
            return Ok(());
        }
    }
    print_json(&bundle.summary)
}

fn equilibrium(path: &Path, flags: &RunFlags) -> Result<(), Failure> {
    let scenario = load_scenario(path, flags)?;
    scenario.check()?;
    let eq = find_equilibrium(&scenario.params, &scenario.dist)
        .map_err(|e| Failure::Numerical(format!("{}: {e}", scenario.name)))?;
    let th = thresholds(&scenario.params, &scenario.dist);
    let report = serde_json::json!({
        "name": scenario.name,
        "equilibrium": eq,
        "thresholds": th.theta_th,
        "d_min": th.d_min,
        "y_avg": eq.y_avg(&scenario.dist),
    });
    if let Some(dir) = &flags.out {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("equilibrium.json"))?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        writeln!(f)?;
    }
    print_json(&report)
}

fn sweep(path: &Path, flags: &RunFlags) -> Result<(), Failure> {
    let cfg: SweepConfig = config::load(path)?;
    let mut plan = cfg.build(flags.grid_points)?;
    apply_flags(&mut plan.base, flags);
    let rows = run_sweep(&plan)?;
    let flagged = rows.iter().filter(|r| r.flag.is_some()).count();
    if flagged > 0 {
        log::warn!("{flagged} grid points flagged as invalid");
    }
    let target = match (&flags.out, &plan.output) {
        (Some(_), _) => Some(out_dir(flags)?.join(format!("sweep_{}.csv", plan.parameter))),
        (None, file) => file.clone(),
    };
    match target {
        Some(file) => {
            write_sweep_csv(plan.parameter, &rows, fs::File::create(&file)?)?;
            info!("wrote {}", file.display());
        }
        None => write_sweep_csv(plan.parameter, &rows, io::stdout().lock())?,
    }
    Ok(())
}

fn compare(path: &Path, flags: &RunFlags) -> Result<(), Failure> {
    let cfg: CompareConfig = config::load(path)?;
    let mut plan = cfg.build(flags.grid_points)?;
    if let Some(e) = flags.epsilon {
        plan.params.epsilon = e;
    }
    let dir = out_dir(flags)?;
    for (parameter, grid) in &plan.sweeps {
        let per_dist = compare_distributions(&plan.params, &plan.distributions, *parameter, grid)?;
        for rows in per_dist {
            let Some(label) = rows.first().map(|r| r.distribution.clone()) else {
                continue;
            };
            let file = dir.join(format!("compare_{parameter}_{label}.csv"));
            write_comparison_csv(*parameter, &rows, fs::File::create(&file)?)?;
            println!("{}", file.display());
        }
    }
    Ok(())
}

fn nimfa_check(
    path: &Path,
    external: Option<(PathBuf, PathBuf)>,
    flags: &RunFlags,
) -> Result<(), Failure> {
    let scenario = load_scenario(path, flags)?;
    scenario.check()?;
    let (p, dist) = (&scenario.params, &scenario.dist);
    let step = flags.step.unwrap_or(scenario.step);
    let horizon = flags.horizon.unwrap_or(NIMFA_HORIZON);
    let mut out = csv::Writer::from_writer(io::stdout().lock());
    out.write_record([
        "d_star",
        "R",
        "rank_one_radius",
        "spectral_radius",
        "radius_gap",
        "trajectory_gap",
        "strongly_connected",
    ])?;
    for d_star in 1..=dist.d_max() + 1 {
        let (graph, factors) = build_abar(d_star, p, dist)?;
        let r =
            reproduction_number(d_star, p, dist).map_err(|e| Failure::Numerical(e.to_string()))?;
        let rank_one = rank_one_radius(&factors);
        let power = spectral_radius(&graph)?;
        let gap = equivalence_check(d_star, p, dist, &scenario.initial.y, step, horizon)?;
        out.write_record([
            d_star.to_string(),
            fmt_sig(r),
            fmt_sig(rank_one),
            fmt_sig(power),
            fmt_sig((rank_one - power).abs()),
            fmt_sig(gap),
            graph.is_strongly_connected().to_string(),
        ])?;
        if let Some(dir) = &flags.out {
            fs::create_dir_all(dir)?;
            graph.write_csv(
                fs::File::create(dir.join(format!("abar_{d_star}_edges.csv")))?,
                fs::File::create(dir.join(format!("abar_{d_star}_recovery.csv")))?,
            )?;
        }
    }
    out.flush()?;
    drop(out);

    if let Some((edges, recovery)) = external {
        let graph =
            DirectedWeightedGraph::read_csv(fs::File::open(&edges)?, fs::File::open(&recovery)?)?;
        let rho = spectral_radius(&graph)?;
        let opts =
            Integration::new(step, horizon).record_every(((1.0 / step).round() as usize).max(1));
        let traj = integrate_nimfa(&vec![0.1; graph.n()], &graph, &opts)?;
        let report = serde_json::json!({
            "nodes": graph.n(),
            "spectral_radius": rho,
            "strongly_connected": graph.is_strongly_connected(),
            "final_mean_infection": traj.last_state().map(|s| s.iter().sum::<f64>() / s.len().max(1) as f64),
        });
        eprintln!("{}", serde_json::to_string_pretty(&report)?);
        if let Some(dir) = &flags.out {
            fs::write(
                dir.join("external_graph.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            traj.write_csv(fs::File::create(dir.join("nimfa_trajectory.csv"))?)?;
        }
    }
    Ok(())
}
