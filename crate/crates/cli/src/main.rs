//! `facealign` command-line front end.

mod commands;
mod image;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use facealign::config::{parse_lines, KeyValueConfig, RunConfig};
use facealign::Error;

#[derive(Parser, Debug)]
#[command(name = "facealign", version, about = "3DMM face alignment pipeline on synthetic data")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Flat key=value configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Extra configuration entry, e.g. `--set train.momentum=0.8` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic morphable basis.
    GenBasis {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        vertices: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Render a labelled synthetic dataset.
    GenData {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// Crop size; also sets the backbone input size.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the regressor and write a checkpoint plus metrics CSV.
    Train {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr0: Option<f64>,
        #[arg(long)]
        decay: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
        /// pdc, vdc, wpdc, wing or merged.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate NME by yaw bucket.
    Eval {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Add a row for the ground-truth predictor.
        #[arg(long)]
        perfect: bool,
        /// Add a row for the dataset mean-shape predictor.
        #[arg(long)]
        mean_shape: bool,
        /// Text report path (also printed to stdout).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory for landmark overlays of the first records.
        #[arg(long)]
        overlays: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        overlay_count: usize,
    },
    /// Fit one image and write parameters, landmarks, mesh and overlay.
    Fit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        /// Dataset to take the image from (with --index).
        #[arg(long, requires = "index", conflicts_with = "image")]
        data: Option<PathBuf>,
        #[arg(long)]
        index: Option<usize>,
        /// Binary PPM (P6) crop.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write the mesh of a parameter file as OBJ.
    ExportMesh {
        #[arg(long)]
        basis: PathBuf,
        /// Text file with 62 whitespace-separated parameters.
        #[arg(long)]
        params: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compare every analytic gradient with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
    Verification(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 2,
            CliError::Core(_) => 1,
            CliError::Verification(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Verification(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Defaults, then the config file, then `--set`, then `--workers`.
fn base_config(global: &GlobalArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &global.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in parse_lines(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    for entry in &global.set {
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {entry:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(w) = global.workers {
        cfg.set("run.workers", &w.to_string())?;
    }
    Ok(cfg)
}

fn init_logging(level: u8) {
    let filter = match level {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(filter)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> CliResult {
    let mut cfg = base_config(&cli.global)?;
    init_logging(cli.global.verbose.max(cfg.verbosity));
    commands::dispatch(cli.command, &mut cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
