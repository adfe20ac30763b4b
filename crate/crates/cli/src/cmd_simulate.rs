//! `simulate`: run a seeded Monte Carlo design and write the structure,
//! tidy per-series results, per-cell accuracy reports, and a manifest.

use std::path::PathBuf;

use clap::Args;

use recon_core::error::{ReconError, Result};
use recon_core::evaluate::{EvaluationReport, SampleKind};
use recon_core::io;
use recon_core::simulate::{run_monte_carlo, CorrelationMode, McDesign};

use crate::designfile::read_design_file;

#[derive(Args)]
pub struct SimulateArgs {
    /// Built-in design family: "small" (4 bottom series over a correlation
    /// grid) or "large" (36 bottom series under 6 groups).
    #[arg(long, value_parser = ["small", "large"])]
    pub design: Option<String>,

    /// TOML design file with the flag-equivalent keys (design, replications,
    /// t, rho, correlation_mode, seed, max_p, h). Mutually exclusive with
    /// the individual design flags.
    #[arg(
        long,
        conflicts_with_all = ["design", "rho", "correlation", "t", "h", "reps", "seed", "max_p"]
    )]
    pub design_file: Option<PathBuf>,

    /// Innovation correlation for the small design (repeatable; default 0).
    #[arg(long = "rho", allow_hyphen_values = true)]
    pub rho: Vec<f64>,

    /// Correlation mode for the large design (default nonnegative).
    #[arg(long, value_parser = ["nonnegative", "mixed"])]
    pub correlation: Option<String>,

    /// Sample size (repeatable).
    #[arg(long = "t")]
    pub t: Vec<usize>,

    /// Forecast horizon (repeatable; default 1).
    #[arg(long = "h")]
    pub h: Vec<usize>,

    /// Number of replications.
    #[arg(long)]
    pub reps: Option<usize>,

    /// RNG seed; replication r of a cell derives its own stream from it.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Highest autoregressive order considered by order selection.
    #[arg(long)]
    pub max_p: Option<usize>,

    /// Output directory (created if missing).
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// The resolved design settings, whichever way they were supplied.
struct Settings {
    family: String,
    replications: usize,
    t: Vec<usize>,
    rho: Vec<f64>,
    correlation: CorrelationMode,
    correlation_label: String,
    seed: u64,
    max_p: usize,
    horizons: Vec<usize>,
}

fn parse_mode(label: &str) -> Result<CorrelationMode> {
    match label {
        "nonnegative" => Ok(CorrelationMode::Nonnegative),
        "mixed" => Ok(CorrelationMode::Mixed),
        other => Err(ReconError::ConfigError(format!(
            "correlation_mode must be 'nonnegative' or 'mixed', got '{other}'"
        ))),
    }
}

fn resolve(args: &SimulateArgs) -> Result<Settings> {
    if let Some(path) = &args.design_file {
        let df = read_design_file(path)?;
        let correlation_label = df
            .correlation_mode
            .clone()
            .unwrap_or_else(|| "nonnegative".into());
        return Ok(Settings {
            family: df.design,
            replications: df.replications,
            t: df.t,
            rho: df.rho.unwrap_or_else(|| vec![0.0]),
            correlation: parse_mode(&correlation_label)?,
            correlation_label,
            seed: df.seed,
            max_p: df.max_p.unwrap_or(5),
            horizons: df.h.unwrap_or_else(|| vec![1]),
        });
    }
    let family = args.design.clone().ok_or_else(|| {
        ReconError::ConfigError("provide --design or --design-file".into())
    })?;
    let replications = args
        .reps
        .ok_or_else(|| ReconError::ConfigError("provide --reps".into()))?;
    let seed = args
        .seed
        .ok_or_else(|| ReconError::ConfigError("provide --seed".into()))?;
    if args.t.is_empty() {
        return Err(ReconError::ConfigError("provide --t".into()));
    }
    let correlation_label = args
        .correlation
        .clone()
        .unwrap_or_else(|| "nonnegative".into());
    Ok(Settings {
        family,
        replications,
        t: args.t.clone(),
        rho: if args.rho.is_empty() {
            vec![0.0]
        } else {
            args.rho.clone()
        },
        correlation: parse_mode(&correlation_label)?,
        correlation_label,
        seed,
        max_p: args.max_p.unwrap_or(5),
        horizons: if args.h.is_empty() {
            vec![1]
        } else {
            args.h.clone()
        },
    })
}

fn build_design(s: &Settings) -> Result<McDesign> {
    let mut design = match s.family.as_str() {
        "small" => McDesign::small(
            s.replications,
            s.t.clone(),
            s.rho.clone(),
            s.seed,
            s.max_p,
        )?,
        "large" => McDesign::large(s.replications, s.t.clone(), s.correlation, s.seed, s.max_p)?,
        other => {
            return Err(ReconError::ConfigError(format!(
                "design must be 'small' or 'large', got '{other}'"
            )))
        }
    };
    design.horizons = s.horizons.clone();
    design.validate()?;
    Ok(design)
}

/// Canonical one-line description of the design; its hash goes into the
/// manifest so a rerun can prove it used the same configuration.
fn describe(s: &Settings) -> String {
    format!(
        "design={};replications={};t={:?};h={:?};rho={:?};correlation={};max_p={};seed={}",
        s.family, s.replications, s.t, s.horizons, s.rho, s.correlation_label, s.max_p, s.seed
    )
}

/// File-name fragment for a cell label ("rho=-0.8" -> "rho_-0.8").
fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let settings = resolve(args)?;
    let design = build_design(&settings)?;
    let result = run_monte_carlo(&design)?;

    std::fs::create_dir_all(&args.out_dir)?;
    io::write_hierarchy_csv(&args.out_dir.join("hierarchy.csv"), &design.hierarchy)?;
    io::write_mc_results_csv(&args.out_dir.join("results.csv"), &result)?;

    let mut text = String::new();
    for cell in &result.cells {
        text.push_str(&format!(
            "cell {} t={} h={}: {} replications done, {} skipped\n",
            cell.label, cell.t, cell.h, cell.replications_done, cell.skipped
        ));
        for (name, accum) in &cell.methods {
            if accum.skipped > 0 {
                text.push_str(&format!("  {name}: {} method-level skips\n", accum.skipped));
            }
        }
        for reason in &cell.skip_reasons {
            text.push_str(&format!("  skip: {reason}\n"));
        }
        for kind in [SampleKind::Insample, SampleKind::OutOfSample] {
            match EvaluationReport::from_cell(cell, &result.series_labels, &result.levels, kind) {
                Ok(report) => {
                    let name = format!(
                        "report_{}_t{}_h{}_{}.csv",
                        sanitize(&cell.label),
                        cell.t,
                        cell.h,
                        kind.label()
                    );
                    io::write_report_csv(&args.out_dir.join(name), &report)?;
                    text.push_str(&format!("[{}]\n", kind.label()));
                    text.push_str(&io::render_report_text(&report));
                    text.push('\n');
                }
                Err(ReconError::EmptyInput(msg)) => {
                    text.push_str(&format!("[{}] no report: {msg}\n", kind.label()));
                }
                Err(other) => return Err(other),
            }
        }
    }
    io::atomic_write(&args.out_dir.join("report.txt"), text.as_bytes())?;

    let manifest = io::Manifest::new(
        env!("CARGO_PKG_VERSION"),
        settings.seed,
        &describe(&settings),
    );
    io::write_manifest(&args.out_dir.join("manifest.txt"), &manifest)?;

    println!(
        "simulated {} cell(s) x {} replication(s); wrote {}",
        result.cells.len(),
        design.replications,
        args.out_dir.display()
    );
    Ok(())
}
