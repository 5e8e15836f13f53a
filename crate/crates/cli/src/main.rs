use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

use tierlab_core::{ErrorClass, TRACE_FORMAT_VERSION};

fn version() -> &'static str {
    static V: OnceLock<String> = OnceLock::new();
    V.get_or_init(|| {
        format!(
            "{} (trace format {TRACE_FORMAT_VERSION})",
            env!("CARGO_PKG_VERSION")
        )
    })
}

#[derive(Parser)]
#[command(name = "tierlab", version = version(), about = "Tiered-memory trace analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct TraceArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub allocs: PathBuf,
    /// RunConfig JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a trace pair and configuration.
    Validate {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Build the object table and per-object profiles.
    Map {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Tier split, touch histogram, reuse statistics, promotions, timeline.
    Characterize {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Migration log from `sim-autonuma`; samples are relabelled with
        /// the simulated residency.
        #[arg(long)]
        migration_log: Option<PathBuf>,
        /// Timeline bucket, e.g. `1s` or `500ms`.
        #[arg(long, default_value = "1s", value_parser = parse_duration)]
        bucket: u64,
        /// Correlation window.
        #[arg(long, default_value = "1s", value_parser = parse_duration)]
        window: u64,
        /// Also render SVG figures for the metrics written.
        #[arg(long)]
        svg: bool,
    },
    /// Replay the trace through the AutoNUMA tiering model.
    SimAutonuma {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, conflicts_with = "disabled")]
        enabled: bool,
        /// Tiering off: pages stay where first touch put them.
        #[arg(long)]
        disabled: bool,
        /// `default_35MB`, `max_8GBps` or a byte rate such as `100MB`.
        #[arg(long)]
        rate_limit: Option<String>,
    },
    /// Object-level static placement.
    Plan {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Split the first object that does not fit.
        #[arg(long)]
        spill: bool,
        /// DRAM budget for the plan; defaults to usable DRAM.
        #[arg(long, value_parser = parse_bytes)]
        dram_bytes: Option<u64>,
        /// `external` or `all`.
        #[arg(long, default_value = "external")]
        density: String,
        /// Exhaustive search instead of the greedy ranking.
        #[arg(long, conflicts_with = "spill")]
        optimal: bool,
    },
    /// Static plan against the simulated baseline.
    Compare {
        #[arg(long)]
        sim_report: PathBuf,
        #[arg(long)]
        plan_eval: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "workload")]
        workload: String,
        /// Row of `plan_eval.csv` to compare.
        #[arg(long, default_value = "plan")]
        scenario: String,
    },
    /// Generate a synthetic trace.
    Synth {
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        preset: Option<String>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render figures and the comparison summary.
    Report {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_duration(s: &str) -> Result<u64, String> {
    let v = tierlab_core::config::parse_duration(s)?;
    if v == 0 {
        return Err("must be > 0".into());
    }
    Ok(v)
}

fn parse_bytes(s: &str) -> Result<u64, String> {
    tierlab_core::config::parse_bytes(s)
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] tierlab_core::Error),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Internal => 3,
            },
            CliError::Invariant(_) => 3,
            CliError::Io { .. } => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("TIERLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("TIERLAB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<String, CliError> {
    init_threads()?;
    match cli.command {
        Command::Validate { trace, out_dir } => commands::validate(&trace, out_dir.as_deref()),
        Command::Map { trace, out_dir } => commands::map(&trace, &out_dir),
        Command::Characterize {
            trace,
            out_dir,
            migration_log,
            bucket,
            window,
            svg,
        } => commands::characterize(&trace, &out_dir, migration_log.as_deref(), bucket, window, svg),
        Command::SimAutonuma {
            trace,
            out_dir,
            enabled: _,
            disabled,
            rate_limit,
        } => commands::sim_autonuma(&trace, &out_dir, !disabled, rate_limit.as_deref()),
        Command::Plan {
            trace,
            out_dir,
            spill,
            dram_bytes,
            density,
            optimal,
        } => commands::plan(&trace, &out_dir, spill, dram_bytes, &density, optimal),
        Command::Compare {
            sim_report,
            plan_eval,
            out_dir,
            workload,
            scenario,
        } => commands::compare(&sim_report, &plan_eval, &out_dir, &workload, &scenario),
        Command::Synth {
            preset,
            spec,
            seed,
            out_dir,
        } => commands::synth(preset.as_deref(), spec.as_deref(), seed, &out_dir),
        Command::Report { in_dir, out_dir } => commands::report(&in_dir, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tierlab: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
