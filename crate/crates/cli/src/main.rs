mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use waam_core::control::Mode;
use waam_core::models::Arch;

#[derive(Debug, Parser)]
#[command(name = "waam", version, about = "Process models and predictive control for wire-arc deposition")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate identification builds on the synthetic plant.
    GenData {
        /// Explicit coverage spec; defaults to the configured random grid.
        #[arg(long)]
        coverage: Option<PathBuf>,
    },
    /// Fit the power-law baseline.
    FitLoglog {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "rnn")]
        arch: Arch,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the architecture-by-size grid.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        archs: Option<Vec<Arch>>,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Deposit a wall under one or more control modes.
    ControlRun {
        /// Comma-separated modes: baseline-constant, loglog-inverse,
        /// rnn-onestep, rnn-adaptive.
        #[arg(long, value_delimiter = ',', required = true)]
        mode: Vec<Mode>,
        /// Neural model file for the rnn modes.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Log-log model file for the loglog mode.
        #[arg(long)]
        loglog: Option<PathBuf>,
        #[arg(long, default_value_t = 28)]
        layers: usize,
    },
    /// Spectral radius, state norm and steady-state diagnostics.
    Diag {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        build: PathBuf,
        #[arg(long, default_value_t = 600)]
        horizon: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Quality table over saved builds.
    Report {
        #[arg(required = true)]
        builds: Vec<PathBuf>,
    },
    /// Finite-difference checks of gradients and input Jacobians.
    CheckGrad {
        #[arg(long, value_delimiter = ',', default_values_t = [3usize, 8, 16])]
        sizes: Vec<usize>,
        /// Random instances per architecture and size.
        #[arg(long, default_value_t = 9)]
        instances: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let ctx = match commands::Context::new(&cli.common, argv) {
        Ok(ctx) => ctx,
        Err(e) => return report(e),
    };
    let result = match cli.command {
        Command::GenData { coverage } => commands::gen_data(&ctx, coverage.as_deref()),
        Command::FitLoglog { data } => commands::fit_loglog(&ctx, &data),
        Command::Train { data, arch, n, epochs } => commands::train(&ctx, &data, arch, n, epochs),
        Command::Ablate {
            data,
            archs,
            sizes,
            epochs,
            workers,
        } => commands::ablate(&ctx, &data, archs, sizes, epochs, workers),
        Command::ControlRun {
            mode,
            model,
            loglog,
            layers,
        } => commands::control_run(&ctx, &mode, model.as_deref(), loglog.as_deref(), layers),
        Command::Diag {
            model,
            build,
            horizon,
            tol,
        } => commands::diag(&ctx, &model, &build, horizon, tol),
        Command::Report { builds } => commands::report(&ctx, &builds),
        Command::CheckGrad { sizes, instances } => commands::check_grad(&ctx, &sizes, instances),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

/// Exit status: 2 usage, 3 data, 4 numeric.
fn exit_status(e: &anyhow::Error) -> u8 {
    use waam_core::Error as E;
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<E>() {
            return match core {
                E::InvalidArgument(_) => 2,
                E::NumericFault(_) | E::Diverged { .. } | E::DegenerateModel(_) => 4,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    3
}

fn report(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    ExitCode::from(exit_status(&e))
}
