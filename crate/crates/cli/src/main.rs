use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Context-aware model/accelerator scheduling: graph building, trace-driven
/// simulation, parameter sweeps and synthetic traces.
#[derive(Debug, Parser)]
#[command(name = "ctxsched", version)]
pub struct Cli {
    /// Catalog of model/accelerator profiles (JSON). Defaults to the built-in
    /// catalog.
    #[arg(long, global = true, env = "CTXSCHED_CATALOG")]
    pub catalog: Option<PathBuf>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the confidence graph of a trace and write its prediction map.
    BuildGraph(BuildGraphArgs),
    /// Replay a trace under one policy and report the aggregates.
    Simulate(SimulateArgs),
    /// Run the adaptive policy over a grid of parameters.
    Sweep(SweepArgs),
    /// Generate a synthetic trace from a scenario description.
    GenTrace(GenTraceArgs),
}

#[derive(Debug, Args)]
pub struct TraceSource {
    /// Trace file (JSON lines). Without it the built-in demo scenario is
    /// generated with --seed.
    #[arg(long)]
    pub trace: Option<PathBuf>,

    /// Seed for the built-in demo trace.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Width of the confidence buckets, in (0, 1].
    #[arg(long, default_value_t = 0.1, value_parser = parse_bucket_width)]
    pub bucket_width: f64,

    /// Maximum cumulative arc cost of a neighborhood.
    #[arg(long = "distance", default_value_t = 0.5, value_parser = parse_non_negative)]
    pub distance_threshold: f64,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub source: TraceSource,

    #[command(flatten)]
    pub graph: GraphArgs,

    /// Drop graph nodes seen on fewer frames than this.
    #[arg(long, default_value_t = 1)]
    pub min_samples: u64,

    /// Output path of the serialized prediction map.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: TraceSource,

    /// shift, single:<model>:<accelerator>, oracle-e, oracle-a or oracle-l.
    #[arg(long, default_value = "shift")]
    pub policy: String,

    /// Serialized prediction map to use instead of building one from the
    /// trace.
    #[arg(long)]
    pub map: Option<PathBuf>,

    #[command(flatten)]
    pub graph: GraphArgs,

    #[arg(long, default_value_t = 0.25, value_parser = parse_non_negative)]
    pub accuracy_threshold: f64,

    /// Momentum window, in frames.
    #[arg(long, default_value_t = 30)]
    pub momentum: usize,

    #[arg(long, default_value_t = 1.0, value_parser = parse_non_negative)]
    pub w_acc: f64,

    #[arg(long, default_value_t = 0.5, value_parser = parse_non_negative)]
    pub w_energy: f64,

    #[arg(long, default_value_t = 0.5, value_parser = parse_non_negative)]
    pub w_latency: f64,

    /// Scheduling overhead charged per frame to the adaptive policy, in seconds.
    #[arg(long, default_value_t = 0.002, value_parser = parse_non_negative)]
    pub overhead: f64,

    /// Fill accelerator memory before the first frame.
    #[arg(long)]
    pub prefill: bool,

    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Per-frame CSV.
    #[arg(long)]
    pub frames_csv: Option<PathBuf>,

    /// Per-frame timeline CSV for external plotting.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: TraceSource,

    /// Grid of parameter ranges (JSON). Omitted parameters keep their
    /// default value.
    #[arg(long)]
    pub grid: PathBuf,

    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,

    #[arg(long, default_value_t = 0.002, value_parser = parse_non_negative)]
    pub overhead: f64,

    /// One CSV row per configuration.
    #[arg(long)]
    pub out: PathBuf,

    /// Spearman correlations per parameter and metric (CSV).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    /// Scenario description (JSON). Defaults to the built-in demo scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    #[arg(long)]
    pub out: PathBuf,
}

fn parse_bucket_width(s: &str) -> Result<f64, String> {
    let w: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if w > 0.0 && w <= 1.0 {
        Ok(w)
    } else {
        Err(format!("bucket width must lie in (0, 1], got {w}"))
    }
}

fn parse_non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("expected a finite non-negative number, got {v}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
