//! Command-line pipeline for coherent forecast reconciliation: simulate
//! synthetic designs, reconcile base forecasts, evaluate accuracy against
//! actuals, and verify the library's numerical guarantees.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 IO error.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recon_core::error::ReconError;

mod cmd_evaluate;
mod cmd_reconcile;
mod cmd_simulate;
mod cmd_verify;
mod designfile;

#[derive(Parser)]
#[command(
    name = "recon",
    version,
    about = "Coherent point-forecast reconciliation for hierarchical and grouped time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded Monte Carlo design and write accuracy tables.
    Simulate(cmd_simulate::SimulateArgs),
    /// Map base forecasts to coherent forecasts with a chosen method.
    Reconcile(cmd_reconcile::ReconcileArgs),
    /// Score forecast files against actual observations.
    Evaluate(cmd_evaluate::EvaluateArgs),
    /// Check the library's numerical guarantees on random instances.
    Verify(cmd_verify::VerifyArgs),
}

/// Maps an error to the documented exit codes. Violations of internal
/// numerical assertions count as verification failures, not config errors.
fn exit_for(err: &ReconError) -> u8 {
    match err {
        ReconError::Io(_) => 3,
        ReconError::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 3,
        ReconError::IncoherentOutput(_)
        | ReconError::ProjectionViolated(_)
        | ReconError::DualFormMismatch(_) => 1,
        _ => 2,
    }
}

/// RECON_THREADS caps the worker count for every parallel stage. The cap
/// must be installed before any parallel work runs, so it is applied once
/// at startup.
fn configure_threads() -> Result<(), ReconError> {
    let raw = match std::env::var("RECON_THREADS") {
        Ok(raw) => raw,
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(e) => return Err(ReconError::ConfigError(format!("RECON_THREADS: {e}"))),
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        ReconError::ConfigError(format!(
            "RECON_THREADS must be a positive integer, got '{raw}'"
        ))
    })?;
    if n == 0 {
        return Err(ReconError::ConfigError(
            "RECON_THREADS must be at least 1".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ReconError::ConfigError(format!("thread pool setup failed: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(err) = configure_threads() {
        eprintln!("error: {err}");
        return ExitCode::from(2);
    }
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate::run(&args).map(|()| true),
        Command::Reconcile(args) => cmd_reconcile::run(&args).map(|()| true),
        Command::Evaluate(args) => cmd_evaluate::run(&args).map(|()| true),
        Command::Verify(args) => cmd_verify::run(&args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}
