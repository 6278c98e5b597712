//! Experiment runner for the pathwise sampling library.
//!
//! `gp-pathwise <experiment> --config <path> [--key value ...] --seed N --out <dir>`
//!
//! Exit codes: 0 on success, 2 on a configuration error, 1 on a numerical
//! or I/O failure. `GP_PATHWISE_THREADS` caps the worker pool.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};

use clap::Parser;

pub use config::{Experiment, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Numerical(#[from] gp_pathwise::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

pub const THREADS_ENV: &str = "GP_PATHWISE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "gp-pathwise",
    about = "Run GP posterior sampling experiments",
    after_help = "Any config key can be overridden with `--key value` (e.g. `--draws 1000 --dims 2,4`)."
)]
struct Args {
    /// wasserstein, thompson or dynamics
    experiment: String,
    /// Flat `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Start from the published experiment sizes instead of desk-scale defaults
    #[arg(long)]
    paper_scale: bool,
    /// Also write a JSON mirror of every table
    #[arg(long)]
    json: bool,
}

const OWN_FLAGS: &[&str] = &["config", "seed", "out", "paper-scale", "json", "help", "version"];

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

/// Outcome of argument parsing: either a run or text to print (help).
#[derive(Debug)]
pub enum Parsed {
    Run(Invocation),
    Print(String),
}

/// Parse `argv` (including the program name). Long options that are not
/// the runner's own flags are config overrides.
pub fn parse_args(argv: &[String]) -> Result<Parsed, CliError> {
    let mut own = Vec::new();
    let mut overrides = Vec::new();
    let mut iter = argv.iter().cloned();
    own.extend(iter.next());
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            own.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if OWN_FLAGS.contains(&name.as_str()) {
            own.push(arg);
            continue;
        }
        let value = match inline.or_else(|| iter.next()) {
            Some(v) => v,
            None => return Err(CliError::Config(format!("`--{name}` needs a value"))),
        };
        overrides.push((name, value));
    }
    let args = match Args::try_parse_from(&own) {
        Ok(a) => a,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(Parsed::Print(e.to_string())),
                _ => Err(CliError::Config(e.to_string())),
            };
        }
    };
    let experiment: Experiment = args.experiment.parse()?;
    let mut cfg = ExperimentConfig::defaults(experiment, args.paper_scale);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for (key, value) in &overrides {
        cfg.set(key, value)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.json {
        cfg.json = true;
    }
    cfg.validate()?;
    Ok(Parsed::Run(Invocation { config: cfg, out: args.out }))
}

/// Cap the global pool from `GP_PATHWISE_THREADS` if it is set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    // A pool that was already built (e.g. by an earlier call) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Run one experiment, writing its tables (and the resolved config) under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(format!("{}_config.txt", cfg.experiment)), cfg.to_text())?;
    match cfg.experiment {
        Experiment::Wasserstein => experiments::wasserstein::run(cfg, Some(out)).map(drop),
        Experiment::Thompson => experiments::thompson::run(cfg, Some(out)).map(drop),
        Experiment::Dynamics => experiments::dynamics::run(cfg, Some(out)).map(drop),
    }
}

/// Full CLI behaviour; returns the process exit code.
pub fn main_with_args(argv: &[String]) -> i32 {
    let result = configure_threads().and_then(|_| parse_args(argv)).and_then(|parsed| match parsed {
        Parsed::Print(text) => {
            print!("{text}");
            Ok(())
        }
        Parsed::Run(inv) => run_experiment(&inv.config, &inv.out),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gp-pathwise: {e}");
            e.exit_code()
        }
    }
}
