mod commands;
mod grid;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluidpert::Error;

#[derive(Parser)]
#[command(
    name = "fluidpert",
    version,
    about = "First-return matrices and first-order perturbation expansions for Markov-modulated fluid queues"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy, Default)]
#[group(multiple = false)]
pub struct Format {
    /// Emit JSON instead of CSV.
    #[arg(long)]
    pub json: bool,
    /// Emit CSV (the default).
    #[arg(long)]
    pub csv: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and print its partition, stationary phase law and drift.
    Validate {
        model: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Solve for Ψ, U and K.
    Psi {
        model: PathBuf,
        /// Newton stopping tolerance.
        #[arg(long, default_value_t = fluidpert::riccati::DEFAULT_TOL)]
        tol: f64,
        /// Directory for psi.csv, u.csv, k.csv and manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: Format,
    },
    /// First-order expansion of Ψ along a perturbation direction.
    Perturb {
        model: PathBuf,
        perturbation: PathBuf,
        #[arg(long, default_value_t = fluidpert::riccati::DEFAULT_TOL)]
        tol: f64,
        /// Compare against full solves at these ε values.
        #[arg(long = "eps-check", num_args = 1.., value_delimiter = ',')]
        eps_check: Vec<f64>,
        /// Directory for psi_bar.csv, psi1.csv, aux_*.csv and manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: Format,
    },
    /// Stationary density on a level grid, and its first-order correction
    /// when a generator perturbation is given.
    Density {
        model: PathBuf,
        perturbation: Option<PathBuf>,
        /// Linear grid A:B:N.
        #[arg(long, default_value = "0:10:101")]
        x: String,
        #[arg(long, default_value_t = fluidpert::riccati::DEFAULT_TOL)]
        tol: f64,
        /// Output file; a manifest is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: Format,
    },
    /// Reproduce a benchmark case (1a, 1b, 2a, 2b, 3a, 3b or all).
    Case {
        #[arg(long)]
        id: String,
        /// Log-spaced grid A:B:N.
        #[arg(long = "eps-grid", default_value = "1e-4:1e-2:20")]
        eps_grid: String,
        #[arg(long, default_value_t = fluidpert::riccati::DEFAULT_TOL)]
        tol: f64,
        /// Output file; a manifest is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: Format,
    },
    /// Monte Carlo estimate of Ψ, or of the stationary level histogram.
    Simulate {
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        replications: usize,
        #[arg(long = "max-time", default_value_t = 1e4)]
        max_time: f64,
        #[arg(long = "burn-in", default_value_t = 100.0)]
        burn_in: f64,
        /// Estimate the level histogram with bins WIDTH:COUNT instead of Ψ.
        #[arg(long)]
        histogram: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: Format,
    },
}

/// Usage and input problems exit with 2, everything the model or the
/// numerics reject exits with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse(_) | Error::UnknownCase(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Validate { model, json } => commands::validate(&model, json),
        Command::Psi {
            model,
            tol,
            out,
            format,
        } => commands::psi(&argv, &model, tol, out.as_deref(), format),
        Command::Perturb {
            model,
            perturbation,
            tol,
            eps_check,
            out,
            format,
        } => commands::perturb(
            &argv,
            &model,
            &perturbation,
            tol,
            &eps_check,
            out.as_deref(),
            format,
        ),
        Command::Density {
            model,
            perturbation,
            x,
            tol,
            out,
            format,
        } => commands::density(
            &argv,
            &model,
            perturbation.as_deref(),
            &x,
            tol,
            out.as_deref(),
            format,
        ),
        Command::Case {
            id,
            eps_grid,
            tol,
            out,
            format,
        } => commands::case(&argv, &id, &eps_grid, tol, out.as_deref(), format),
        Command::Simulate {
            model,
            seed,
            replications,
            max_time,
            burn_in,
            histogram,
            out,
            format,
        } => {
            let cfg = fluidpert::simulate::SimConfig {
                replications,
                seed,
                max_time,
                burn_in,
            };
            commands::simulate(
                &argv,
                &model,
                cfg,
                histogram.as_deref(),
                out.as_deref(),
                format,
            )
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "code": e.code(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(exit_code(&e))
        }
    }
}
