//! `railsync`: command-line driver for the timetable analytics pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use railsync::avalanche::AvalancheError;
use railsync::Minutes;

use config::{BufferingSource, DriverChoice, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing input `{}`: {hint}", path.display())]
    Missing { path: PathBuf, hint: &'static str },
    #[error("{0}")]
    Guard(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Guard(_) => 2,
            _ => 1,
        }
    }
}

impl From<AvalancheError> for CliError {
    fn from(e: AvalancheError) -> Self {
        match e {
            AvalancheError::Guard { .. } => CliError::Guard(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    #[default]
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "railsync", version, about = "Timetable synchronization, delay propagation and avalanche analytics")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a native bundle or GTFS subset and write a normalized bundle.
    Ingest(IngestArgs),
    /// Write a synthetic timetable bundle.
    Generate(GenerateArgs),
    /// Per-station synchronization indices and rank profile.
    Sync(SyncArgs),
    /// Secondary-delay sweep, or a single delay scenario.
    Sweep(SweepArgs),
    /// Avalanche model runs.
    Avalanche(AvalancheArgs),
    /// Join sync, sweep and buffering times into report tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Native bundle directory.
    #[arg(long, conflicts_with = "gtfs")]
    bundle: Option<PathBuf>,
    /// Directory with stops.txt, trips.txt and stop_times.txt.
    #[arg(long)]
    gtfs: Option<PathBuf>,
    /// Minimal interchange time assigned to GTFS stops.
    #[arg(long)]
    gtfs_min_transfer: Option<Minutes>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Station grid columns.
    #[arg(long)]
    grid_width: Option<usize>,
    /// Station grid rows.
    #[arg(long)]
    grid_height: Option<usize>,
    /// Number of train lines.
    #[arg(long)]
    lines: Option<usize>,
    /// Candidate line periods in minutes.
    #[arg(long, value_delimiter = ',')]
    periods: Option<Vec<Minutes>>,
    /// Number of passenger routes.
    #[arg(long)]
    routes: Option<usize>,
    /// Plant a synchronized band of medium-sized hub stations.
    #[arg(long)]
    planted_band: bool,
}

#[derive(Debug, Args)]
struct SyncArgs {
    /// Bundle directory (default: `<out-dir>/bundle`).
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Phase period in minutes.
    #[arg(long)]
    tau: Option<Minutes>,
    /// Random runs per station for the null baseline.
    #[arg(long)]
    null_runs: Option<usize>,
    /// Rank window of the profile.
    #[arg(long)]
    window: Option<usize>,
    /// Size class boundaries, `small,large`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    boundaries: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Bundle directory (default: `<out-dir>/bundle`).
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Primary delays in minutes.
    #[arg(long = "p", value_delimiter = ',')]
    p_values: Option<Vec<Minutes>>,
    /// Default longest wait of a connecting train.
    #[arg(long)]
    max_wait: Option<Minutes>,
    /// Longest interchange gap counted as a transfer.
    #[arg(long)]
    transfer_window: Option<Minutes>,
    /// JSON scenario file; runs that scenario instead of the sweep.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AvalancheArgs {
    /// Driver to run; `both` compares them seed by seed.
    #[arg(long, value_enum)]
    driver: Option<DriverChoice>,
    /// Driver period in steps.
    #[arg(long)]
    period: Option<u64>,
    /// Toppling threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Amplification factor of a toppling.
    #[arg(long)]
    m: Option<f64>,
    /// Nodes of the random graph.
    #[arg(long)]
    n: Option<usize>,
    /// Edges of the random graph.
    #[arg(long)]
    edges: Option<usize>,
    /// Transmission probability per edge and toppling.
    #[arg(long)]
    p_trans: Option<f64>,
    /// Time steps per run.
    #[arg(long)]
    steps: Option<u64>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Bundle used for buffering times.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Sync CSV (default: `<out-dir>/sync.csv`).
    #[arg(long)]
    sync: Option<PathBuf>,
    /// Sweep CSV (default: `<out-dir>/sweep.csv`).
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// Primary delay used for the classification.
    #[arg(long = "p")]
    p: Option<Minutes>,
    /// Rank window of the joint profile.
    #[arg(long)]
    joint_window: Option<usize>,
    /// Classify on rank-smoothed values with this window.
    #[arg(long)]
    smoothed: Option<usize>,
    /// Quadrant thresholds, `b,s`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    thresholds: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    buffering: Option<BufferingSource>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Applies the flags of `command` on top of `cfg`.
fn apply_flags(cfg: &mut RunConfig, command: &Command) {
    let inputs = &mut cfg.inputs;
    match command {
        Command::Ingest(a) => {
            if a.bundle.is_some() || a.gtfs.is_some() {
                inputs.bundle = a.bundle.clone();
                inputs.gtfs = a.gtfs.clone();
            }
            set(&mut cfg.gtfs_min_transfer, a.gtfs_min_transfer);
        }
        Command::Generate(a) => {
            let s = &mut cfg.synthetic;
            set(&mut s.grid_width, a.grid_width);
            set(&mut s.grid_height, a.grid_height);
            set(&mut s.lines, a.lines);
            set(&mut s.periods, a.periods.clone());
            set(&mut s.routes, a.routes);
            if a.planted_band && s.sync_band.is_none() {
                s.sync_band = Some(Default::default());
            }
        }
        Command::Sync(a) => {
            set(&mut inputs.bundle, a.bundle.clone().map(Some));
            set(&mut cfg.tau, a.tau);
            set(&mut cfg.null_runs, a.null_runs);
            set(&mut cfg.sync_window, a.window);
            if let Some(b) = &a.boundaries {
                cfg.category_boundaries = (b[0], b[1]);
            }
        }
        Command::Sweep(a) => {
            set(&mut inputs.bundle, a.bundle.clone().map(Some));
            set(&mut inputs.scenario, a.scenario.clone().map(Some));
            set(&mut cfg.p_values, a.p_values.clone());
            set(&mut cfg.waiting_policy.default_max_wait, a.max_wait);
            set(&mut cfg.transfer_window, a.transfer_window);
        }
        Command::Avalanche(a) => {
            let ava = &mut cfg.avalanche;
            set(&mut ava.driver, a.driver);
            if let Some(period) = a.period {
                ava.params.driver = railsync::avalanche::Driver::Periodic { period };
            }
            set(&mut ava.params.threshold, a.threshold);
            set(&mut ava.params.m, a.m);
            set(&mut ava.params.p_trans, a.p_trans);
            set(&mut ava.nodes, a.n);
            set(&mut ava.edges, a.edges);
            set(&mut ava.steps, a.steps);
            set(&mut ava.seeds, a.seeds);
        }
        Command::Report(a) => {
            set(&mut inputs.bundle, a.bundle.clone().map(Some));
            set(&mut inputs.sync, a.sync.clone().map(Some));
            set(&mut inputs.sweep, a.sweep.clone().map(Some));
            set(&mut cfg.report.p, a.p.map(Some));
            set(&mut cfg.joint_window, a.joint_window);
            if let Some(w) = a.smoothed {
                cfg.report.mode = railsync::report::ClassifyMode::Smoothed { window: w };
            }
            if let Some(t) = &a.thresholds {
                cfg.report.thresholds = Some((t[0], t[1]));
            }
            set(&mut cfg.report.buffering, a.buffering);
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    apply_flags(&mut cfg, &cli.command);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot start worker pool: {e}")))?;
    std::fs::create_dir_all(&cli.out_dir).map_err(|source| CliError::Io {
        path: cli.out_dir.clone(),
        source,
    })?;

    let ctx = commands::Context {
        cfg: &cfg,
        out_dir: &cli.out_dir,
        format: cli.format,
    };
    pool.install(|| match &cli.command {
        Command::Ingest(_) => commands::ingest(&ctx),
        Command::Generate(_) => commands::generate(&ctx),
        Command::Sync(_) => commands::sync(&ctx),
        Command::Sweep(_) => commands::sweep(&ctx),
        Command::Avalanche(_) => commands::avalanche(&ctx),
        Command::Report(_) => commands::report(&ctx),
    })
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
