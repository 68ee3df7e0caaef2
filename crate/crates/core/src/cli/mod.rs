//! Command-line interface. `main` parses arguments and returns an exit code:
//! 0 on success, 2 on bad arguments, 1 on runtime failure.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub(crate) fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "synthgen",
    version,
    about = "Reaction-graph molecule generation with masked diffusion and coordinate flow"
)]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "SYNTHGEN_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,
    /// TOML file with per-command sections; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress summaries on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a vocabulary, check it and print a summary.
    ValidateVocab {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a random dataset of assembled molecules with coordinates.
    GenDataset(GenArgs),
    /// Fit the count-table denoiser on a dataset.
    FitTabular(FitArgs),
    /// Draw unconditional samples.
    Sample(SampleArgs),
    /// Draw samples with some blocks and coordinates held fixed.
    Inpaint {
        #[command(flatten)]
        sample: SampleArgs,
        /// TOML file listing `n`, `t_star` and `[[fragments]]` with slot, block, coords.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Compare generated molecules against a reference set.
    Eval(EvalArgs),
    /// Run the acceptance suite and print one line per criterion.
    Selftest {
        /// Comma-separated criterion numbers; all by default.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub depth_min: Option<usize>,
    #[arg(long)]
    pub depth_max: Option<usize>,
    /// Keep only one molecule per canonical code.
    #[arg(long)]
    pub dedup: bool,
    /// Skip conformer embedding.
    #[arg(long)]
    pub no_coords: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub time_buckets: Option<usize>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleName>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    /// Add the pairwise, sLDDT and bond losses to the evaluation total.
    #[arg(long)]
    pub auxiliary: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleName {
    Linear,
    Geometric,
    Loglinear,
}

impl ScheduleName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleName::Linear => "linear",
            ScheduleName::Geometric => "geometric",
            ScheduleName::Loglinear => "loglinear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserKind {
    /// `--model` is a fitted count-table model.
    Tabular,
    /// `--model` is a dataset; samples come from its exact posterior.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = DenoiserKind::Tabular)]
    pub denoiser: DenoiserKind,
    #[arg(long, default_value_t = 100)]
    pub n_samples: usize,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Inference annealing coefficient.
    #[arg(long)]
    pub anneal: Option<f64>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleName>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long, value_enum)]
    pub velocity: Option<VelocityName>,
    #[arg(long, value_enum)]
    pub constraints: Option<Switch>,
    /// Fixed block count instead of the training distribution.
    #[arg(long)]
    pub n_blocks: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VelocityName {
    Difference,
    Rescaled,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub report: PathBuf,
    /// Optional CSV of kernel density estimates per geometry key.
    #[arg(long)]
    pub kde: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level.into())
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => config::ConfigFile::load(p)?,
        None => config::ConfigFile::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(runtime)?;
    pool.install(|| commands::dispatch(cli, &file))
}
