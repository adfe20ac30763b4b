//! `evaluate`: score labeled forecast panels against actual observations,
//! writing per-series/per-level/overall MSE and relative improvement.

use std::path::PathBuf;

use clap::Args;

use recon_core::error::{ReconError, Result};
use recon_core::evaluate::{mse_table, EvaluationReport, SampleKind};
use recon_core::hierarchy::build_summing_matrix;
use recon_core::io;

#[derive(Args)]
pub struct EvaluateArgs {
    /// Aggregation structure: a parent,child edge-list CSV.
    #[arg(long)]
    pub hierarchy: PathBuf,

    /// Actual observations panel CSV (must be coherent).
    #[arg(long)]
    pub actuals: PathBuf,

    /// Reference forecast panel CSV; improvements are relative to it.
    #[arg(long)]
    pub reference: PathBuf,

    /// Forecast panel to score, as label=path (repeatable).
    #[arg(long = "forecast", value_parser = parse_labeled_path)]
    pub forecasts: Vec<(String, PathBuf)>,

    /// How the rows should be labeled in the report.
    #[arg(long, value_parser = ["insample", "outofsample"], default_value = "outofsample")]
    pub sample: String,

    /// Output directory (created if missing).
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_labeled_path(raw: &str) -> std::result::Result<(String, PathBuf), String> {
    match raw.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => {
            Ok((label.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected label=path, got '{raw}'")),
    }
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    if args.forecasts.is_empty() {
        return Err(ReconError::ConfigError(
            "provide at least one --forecast label=path".into(),
        ));
    }
    let spec = io::read_hierarchy_csv(&args.hierarchy)?;
    let sm = build_summing_matrix(&spec)?;
    let actual_panel = io::read_panel_csv(&args.actuals, &sm)?;
    let (_, reference) = io::read_table_csv(&args.reference, &sm)?;

    let reference_mse = mse_table(&actual_panel.y, &reference)?;
    let mut methods = Vec::with_capacity(args.forecasts.len());
    for (label, path) in &args.forecasts {
        let (_, forecast) = io::read_table_csv(path, &sm)?;
        methods.push((label.clone(), mse_table(&actual_panel.y, &forecast)?));
    }

    let kind = if args.sample == "insample" {
        SampleKind::Insample
    } else {
        SampleKind::OutOfSample
    };
    let report = EvaluationReport::build(
        kind,
        "reference",
        reference_mse,
        methods,
        sm.labels.clone(),
        &sm.levels,
    )?;

    std::fs::create_dir_all(&args.out_dir)?;
    io::write_report_csv(&args.out_dir.join("report.csv"), &report)?;
    io::atomic_write(
        &args.out_dir.join("report.txt"),
        io::render_report_text(&report).as_bytes(),
    )?;

    println!(
        "evaluated {} forecast set(s) over {} row(s); wrote {}",
        args.forecasts.len(),
        actual_panel.y.nrows(),
        args.out_dir.display()
    );
    Ok(())
}
