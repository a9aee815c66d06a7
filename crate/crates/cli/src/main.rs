//! `feedshape`: staged driver for simulation, pCreate modeling, sensitivity
//! estimation, experiments and plot data.

mod files;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use feedshape_core::pipeline::LabConfig;
use feedshape_core::Error;

use crate::files::{MissingInput, OutputExists, RunDir, CONFIG};
use crate::stages::ExperimentMode;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_CONTRACT: u8 = 4;

#[derive(Parser)]
#[command(name = "feedshape", version, about = "Feedback-shaping content ecosystem laboratory")]
struct Cli {
    /// TOML run configuration; defaults to `<out>/config.toml` after `simulate`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding every stage's inputs and outputs.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    overwrite: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the ecosystem and its consumer-only history.
    Simulate,
    /// Build training examples, fit the pCreate model and evaluate it.
    Train,
    /// Publish the per-user utility snapshot.
    Estimate,
    /// Run an online experiment or the alpha sweep.
    Experiment {
        #[arg(value_enum)]
        mode: Mode,
        /// Give both arms the configured policy.
        #[arg(long)]
        aa: bool,
    },
    /// Write plot data from the run directory.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Consumer,
    Ego,
    Sweep,
}

fn load_config(cli: &Cli) -> Result<LabConfig> {
    let path = cli.config.clone().unwrap_or_else(|| cli.out.join(CONFIG));
    if !path.is_file() {
        return Err(Error::config(format!("config file {} not found", path.display())).into());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: LabConfig = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let dir = RunDir::new(&cli.out, cli.overwrite);
    match &cli.command {
        Command::Simulate => stages::simulate(&load_config(cli)?, &dir),
        Command::Train => stages::train(&load_config(cli)?, &dir),
        Command::Estimate => stages::estimate(&load_config(cli)?, &dir),
        Command::Experiment { mode, aa } => {
            let cfg = load_config(cli)?;
            match mode {
                Mode::Consumer => stages::experiment(&cfg, &dir, ExperimentMode::Consumer, *aa),
                Mode::Ego => stages::experiment(&cfg, &dir, ExperimentMode::Ego, *aa),
                Mode::Sweep => stages::sweep(&cfg, &dir),
            }
        }
        Command::Report => stages::report(&dir),
    }
}

/// 2 for configuration problems, 3 for missing or unusable data, 4 for
/// files that break their schema or a stage contract.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::Contract(_) | Error::Schema(_) | Error::Json(_) | Error::Csv(_) => EXIT_CONTRACT,
                Error::Windowing(_)
                | Error::DegenerateData(_)
                | Error::UndefinedMetric(_)
                | Error::SingularDesign(_)
                | Error::Selection { .. }
                | Error::UndefinedRelativeEffect { .. }
                | Error::Io(_) => EXIT_DATA,
            };
        }
        if cause.is::<OutputExists>() {
            return EXIT_CONFIG;
        }
        if cause.is::<MissingInput>() || cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
        if cause.is::<serde_json::Error>() || cause.is::<toml::ser::Error>() {
            return EXIT_CONTRACT;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
