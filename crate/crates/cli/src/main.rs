mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linemon::dataset::FeatureKind;
use linemon::direct_obs::StrategyKind;
use linemon::eval::ReportFormat;
use linemon::placement::Heuristic;

/// Line outage identification from PMU phasor changes.
#[derive(Debug, Parser)]
#[command(name = "linemon", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment config (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Recompute artifacts even if the run directory is up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Write SpaRSA iteration traces alongside placement artifacts.
    #[arg(long, global = true)]
    trace: bool,
    /// Include the 57- and 118-bus systems in `reproduce`.
    #[arg(long, global = true)]
    large: bool,
}

#[derive(Debug, Args, Default, Clone)]
struct Overrides {
    /// Bundled case name or MATPOWER file.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long, value_parser = parse_feature_kind)]
    feature_kind: Option<FeatureKind>,
    /// Extension weight, or `auto`.
    #[arg(long)]
    rho: Option<String>,
    /// One value or a comma-separated grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    tau: Option<Vec<f64>>,
    #[arg(long)]
    heuristic: Option<Heuristic>,
    #[arg(long)]
    num_pmus: Option<usize>,
    #[arg(long)]
    force_reference: Option<bool>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    eta: Option<f64>,
}

fn parse_feature_kind(s: &str) -> Result<FeatureKind, String> {
    match s {
        "plain" => Ok(FeatureKind::Plain),
        "extended" => Ok(FeatureKind::Extended),
        "combined" => Ok(FeatureKind::Combined),
        other => Err(format!("unknown feature kind `{other}`")),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Screen the outage catalog and synthesize the demand profile.
    Synth(Overrides),
    /// Simulate normal and outage states and build the datasets.
    Simulate(Overrides),
    /// Fit the fully instrumented model.
    Train(Overrides),
    /// Choose PMU buses for every configured tau.
    Place(Overrides),
    /// Score models on the test set.
    Eval(EvalArgs),
    /// Solve one power flow and print the phasors as JSON.
    Powerflow(PowerflowArgs),
    /// Run the bundled recipe for one test system (or all of them).
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Saved model; with --test-cache evaluates it without running the pipeline.
    #[arg(long, requires = "test_cache")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    test_cache: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PowerflowArgs {
    #[arg(long)]
    case: Option<String>,
    /// Take out the line between these two original bus numbers, as `4-5`.
    #[arg(long)]
    outage: Option<String>,
    /// Scale every load by this factor.
    #[arg(long, default_value_t = 1.0)]
    demand_scale: f64,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// `14bus`, `30bus`, `57bus` or `118bus`; all default systems if absent.
    #[arg(long)]
    system: Option<String>,
    #[command(flatten)]
    overrides: Overrides,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(&cli.global, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
