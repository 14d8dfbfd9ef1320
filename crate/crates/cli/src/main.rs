use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flh_core::engine::{simulate_with, SimError, SimOptions};
use flh_core::fundamental_diagram::ConcaveFd;
use flh_core::harness::{bench, bench_csv, compare, compare_csv, compare_table};
use flh_core::io::{
    diagnostics_json, diagnostics_of_io, diagnostics_of_sim, load_network, load_scenario, write_bundle, Diagnostic,
    ProbeRow,
};
use flh_core::network::{five_link_network, grid_network, Network};
use flh_core::par::Execution;
use flh_core::scenario::{ModelKind, RandomConfig};

#[derive(Parser)]
#[command(name = "flh", version, about = "Network traffic simulation with exact Lax-Hopf link models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write boundary flows, probes and timings.
    Simulate(SimulateArgs),
    /// Outflow RMSE of each model against FLH over random scenarios.
    Compare(CompareArgs),
    /// Link- and node-model wall-clock per model and horizon.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// flh, lh, ctm or ltm; overrides the scenario.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Interior sample `link:x:t` (metres from the link start, seconds).
    #[arg(long = "probe", value_name = "LINK:X:T")]
    probes: Vec<String>,
    /// Also write per-step evaluation counts to ops.csv.
    #[arg(long)]
    count_ops: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Run links and nodes on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct RandomArgs {
    /// Network file; defaults to the built-in network of the command.
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "flh,lh,ctm,ltm")]
    models: Vec<String>,
    /// Initial blocks per link.
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    /// Seconds between redraws of the edge flows.
    #[arg(long, default_value_t = 10.0)]
    period: f64,
    /// Upper end of the per-lane initial densities; defaults to the lowest jam density.
    #[arg(long)]
    max_density: Option<f64>,
    /// Upper end of the per-lane edge flows; defaults to the lowest capacity.
    #[arg(long)]
    max_flow: Option<f64>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: RandomArgs,
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    #[arg(long = "dt", value_delimiter = ',', default_value = "1,2,5")]
    dts: Vec<f64>,
    #[arg(long, default_value_t = 600.0)]
    horizon: f64,
    #[arg(long, default_value = "compare.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: RandomArgs,
    #[arg(long, value_delimiter = ',', default_value = "200,500,1000")]
    horizons: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "timing.csv")]
    out: PathBuf,
}

/// Failure of a command: input problems exit with 2, everything else with 1.
enum Failure {
    Invalid(Vec<Diagnostic>),
    Runtime(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Step { .. } | SimError::Shape(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(diagnostics_of_sim(&e)),
        }
    }
}

fn invalid(kind: &'static str, message: impl Into<String>) -> Failure {
    Failure::Invalid(vec![Diagnostic::new(kind, message)])
}

fn parse_model(name: &str) -> Result<ModelKind, Failure> {
    name.parse().map_err(|_| invalid("model", format!("unknown model {name:?}; expected flh, lh, ctm or ltm")))
}

fn parse_probe(text: &str) -> Result<(String, f64, f64), Failure> {
    let bad = || invalid("probe", format!("probe {text:?} is not of the form link:x:t"));
    let mut parts = text.rsplitn(3, ':');
    let t = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let x = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let link = parts.next().filter(|s| !s.is_empty()).ok_or_else(bad)?;
    Ok((link.to_string(), x, t))
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn run_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let net = load_network(&args.network).map_err(|e| Failure::Invalid(diagnostics_of_io(&e)))?;
    let mut sc = load_scenario(&args.scenario).map_err(|e| Failure::Invalid(diagnostics_of_io(&e)))?;
    if let Some(m) = &args.model {
        sc.model = parse_model(m)?;
    }
    if let Some(dt) = args.dt {
        sc.dt = dt;
    }
    if let Some(h) = args.horizon {
        sc.horizon = h;
    }
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    let probes = args.probes.iter().map(|p| parse_probe(p)).collect::<Result<Vec<_>, _>>()?;
    if sc.model == ModelKind::Ltm && !probes.is_empty() {
        return Err(SimError::ProbeRefused(sc.model).into());
    }
    let opts = SimOptions { execution: execution(args.sequential), record_history: !probes.is_empty() };
    let result = simulate_with(&net, &sc, opts)?;
    let rows = probes
        .iter()
        .map(|(link, x, t)| {
            let (count, density) = result.probe(link, *x, *t)?;
            Ok(ProbeRow { link: link.clone(), x: *x, t: *t, count, density })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    write_bundle(&args.out, &result, &rows, args.count_ops)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", args.out.display())))?;
    println!(
        "{} on {} links: {} steps of {} s, {:.6} veh in, {:.6} veh out, link model {:.6} s, node model {:.6} s",
        result.model,
        result.links.len(),
        result.steps,
        result.dt,
        result.entered,
        result.exited,
        result.timing.link,
        result.timing.node
    );
    Ok(())
}

/// Network plus random-scenario template shared by `compare` and `bench`.
fn setup(args: &RandomArgs, fallback: fn() -> Network) -> Result<(Network, Vec<ModelKind>, RandomConfig), Failure> {
    let net = match &args.network {
        Some(path) => load_network(path).map_err(|e| Failure::Invalid(diagnostics_of_io(&e)))?,
        None => fallback(),
    };
    net.validate().map_err(SimError::Network)?;
    let models = args.models.iter().map(|m| parse_model(m.trim())).collect::<Result<Vec<_>, _>>()?;
    let mut k_jam = f64::INFINITY;
    let mut q_max = f64::INFINITY;
    for link in &net.links {
        let fd = link.diagram.build().map_err(|e| invalid("network", format!("link {}: {e}", link.id)))?;
        k_jam = k_jam.min(fd.jam_density());
        q_max = q_max.min(fd.capacity());
    }
    let cfg = RandomConfig {
        density: (0.0, args.max_density.unwrap_or(k_jam)),
        flow: (0.0, args.max_flow.unwrap_or(q_max)),
        blocks: args.blocks,
        period: args.period,
        ..RandomConfig::default()
    };
    Ok((net, models, cfg))
}

fn write(path: &PathBuf, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn run_compare(args: CompareArgs) -> Result<(), Failure> {
    let (net, models, cfg) = setup(&args.common, five_link_network)?;
    if args.dts.iter().any(|dt| !(dt.is_finite() && *dt > 0.0)) {
        return Err(invalid("arguments", "every --dt must be positive"));
    }
    let cfg = RandomConfig { horizon: args.horizon, ..cfg };
    let opts = SimOptions { execution: execution(args.common.sequential), record_history: false };
    let rows = compare(&net, &models, &args.dts, args.seeds, &cfg, opts)?;
    write(&args.out, &compare_csv(&rows))?;
    print!("{}", compare_table(&rows));
    Ok(())
}

fn austin_like_grid() -> Network {
    grid_network(10, 11, 200.0, 2, 60.0)
}

fn run_bench(args: BenchArgs) -> Result<(), Failure> {
    let (net, models, cfg) = setup(&args.common, austin_like_grid)?;
    let cfg = RandomConfig { dt: args.dt, ..cfg };
    let opts = SimOptions { execution: execution(args.common.sequential), record_history: false };
    let rows = bench(&net, &models, &args.horizons, args.repeat, args.seed, &cfg, opts)?;
    write(&args.out, &bench_csv(&rows))?;
    println!("{:<6} {:>10} {:>14} {:>14}", "model", "horizon", "link [s]", "node [s]");
    for r in &rows {
        println!("{:<6} {:>10} {:>14.6} {:>14.6}", r.model.name(), r.horizon, r.link_seconds, r.node_seconds);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Compare(args) => run_compare(args),
        Command::Bench(args) => run_bench(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(list)) => {
            eprintln!("{}", diagnostics_json(&list));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
