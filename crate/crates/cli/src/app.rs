//! Argument parsing and the top-level run loop.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spt_core::models::GateMode;

use crate::commands::{self, CommandKind, RunManifest};
use crate::config::{FileConfig, Overrides, Settings};
use crate::failure::Failure;
use crate::output::{self, Format};

#[derive(Debug, Parser)]
#[command(name = "spt", version, about = "Rydberg single-photon transistor simulator and analysis toolkit")]
pub struct Cli {
    /// TOML config file; unset keys take the 30 µs defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Runs per simulated ensemble.
    #[arg(long, global = true)]
    runs: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    output: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads; 0 picks automatically. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Incoming,
    Stored,
}

impl From<ModeArg> for GateMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Incoming => GateMode::Incoming,
            ModeArg::Stored => GateMode::Stored,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Switch contrast versus mean gate photon number.
    ContrastScan,
    /// Optical gain versus mean source photon number.
    GainScan,
    /// Transmitted source photons with and without gate.
    TransferScan,
    /// Gated and reference ensembles with count histograms.
    Simulate,
    /// Fit the optical depth to a contrast table (x, contrast, sigma).
    FitOd {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Fit the source saturation curve to (n_in, n_out, sigma).
    FitSaturation {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
    },
    /// Histogram decomposition and optimal discrimination threshold, on an
    /// `events,runs` histogram or on a fresh simulation.
    Detect {
        #[arg(long, value_name = "CSV")]
        input: Option<PathBuf>,
    },
}

fn manifest(cli: &Cli, settings: &Settings) -> RunManifest {
    let (command, input) = match &cli.command {
        Command::ContrastScan => (CommandKind::ContrastScan, None),
        Command::GainScan => (CommandKind::GainScan, None),
        Command::TransferScan => (CommandKind::TransferScan, None),
        Command::Simulate => (CommandKind::Simulate, None),
        Command::FitOd { input, .. } => (CommandKind::FitOd, Some(input.clone())),
        Command::FitSaturation { input } => (CommandKind::FitSaturation, Some(input.clone())),
        Command::Detect { input } => (CommandKind::Detect, input.clone()),
    };
    RunManifest {
        command,
        config_path: cli.config.clone(),
        input,
        seed: settings.simulation.seed,
        output_dir: cli.output.clone(),
        format: cli.format,
        threads: cli.threads,
        force: cli.force,
    }
}

fn settings(cli: &Cli) -> Result<Settings, Failure> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mode = match cli.command {
        Command::FitOd { mode, .. } => mode.map(GateMode::from),
        _ => None,
    };
    let s = Settings::resolve(file, Overrides { seed: cli.seed, runs: cli.runs, mode });
    s.validate()?;
    Ok(s)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let settings = settings(cli)?;
    for w in settings.transistor.warnings() {
        eprintln!("spt: warning: {w}");
    }
    let manifest = manifest(cli, &settings);
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::Io(format!("cannot start worker threads: {e}")))?;
    }
    match commands::execute(&manifest, &settings) {
        Ok(artifacts) => {
            for path in
                output::write_all(&cli.output, manifest.command.stem(), &artifacts, cli.force, &manifest, &settings)?
            {
                println!("{}", path.display());
            }
            Ok(())
        }
        Err(f @ Failure::Numerical(_)) => {
            if let Ok(path) =
                output::write_diagnostics(&cli.output, manifest.command.stem(), &f, &manifest, Some(&settings))
            {
                eprintln!("spt: diagnostics written to {}", path.display());
            }
            Err(f)
        }
        Err(f) => Err(f),
    }
}

/// Parse the process arguments and run; the returned code is the exit status.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("spt: {f}");
            f.exit_code()
        }
    }
}
