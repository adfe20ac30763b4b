//! `reconcile`: read a structure, base forecasts, and whatever inputs the
//! chosen method needs; write the mapping matrix and coherent forecasts.

use std::path::PathBuf;

use clap::Args;
use nalgebra::DMatrix;

use recon_core::covariance::{
    diagonal_covariance, sample_covariance, shrink_covariance, CovarianceEstimate,
};
use recon_core::error::{ReconError, Result};
use recon_core::hierarchy::{build_summing_matrix, SummingMatrix};
use recon_core::io;
use recon_core::reconcile::{
    apply, g_bottom_up, g_emint_u, g_erm, g_gls, g_mint, g_ols, g_wls, Alignment,
    ReconciliationMap, TrainingPanel,
};

pub const METHOD_NAMES: [&str; 8] = [
    "bu",
    "ols",
    "wls",
    "mint_sample",
    "mint_shrink",
    "gls",
    "erm",
    "emint_u",
];

#[derive(Args)]
pub struct ReconcileArgs {
    /// Aggregation structure: a parent,child edge-list CSV.
    #[arg(long)]
    pub hierarchy: PathBuf,

    /// Base forecasts: a panel CSV (t column, then one column per series).
    #[arg(long)]
    pub base: PathBuf,

    /// Mapping method.
    #[arg(long, value_parser = METHOD_NAMES)]
    pub method: String,

    /// Residual panel CSV; the weight matrix is estimated from it
    /// (diagonal for wls, sample for mint_sample/gls, shrunk for
    /// mint_shrink).
    #[arg(long)]
    pub residuals: Option<PathBuf>,

    /// Weight/covariance matrix CSV (series x series), used verbatim
    /// instead of estimating from residuals. Must be diagonal for wls.
    #[arg(long)]
    pub cov_file: Option<PathBuf>,

    /// Actual observations panel CSV (training data for erm/emint_u).
    #[arg(long)]
    pub actuals: Option<PathBuf>,

    /// Fitted values or holdout base forecasts panel CSV, row-aligned with
    /// --actuals (training data for erm/emint_u).
    #[arg(long)]
    pub fitted: Option<PathBuf>,

    /// Forecast horizon recorded in the map provenance.
    #[arg(long, default_value_t = 1)]
    pub h: usize,

    /// Output directory (created if missing).
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Weight-matrix input for the covariance-weighted methods: either a
/// residual panel to estimate from, or a matrix taken verbatim.
fn weight_estimate(args: &ReconcileArgs, sm: &SummingMatrix) -> Result<CovarianceEstimate> {
    if let Some(path) = &args.residuals {
        let (_, resid) = io::read_table_csv(path, sm)?;
        return match args.method.as_str() {
            "wls" => diagonal_covariance(&resid),
            "mint_sample" | "gls" => sample_covariance(&resid),
            "mint_shrink" => shrink_covariance(&resid),
            other => Err(ReconError::ConfigError(format!(
                "method {other} does not take --residuals"
            ))),
        };
    }
    if let Some(path) = &args.cov_file {
        let w = io::read_matrix_csv(path, &sm.labels)?;
        return CovarianceEstimate::user_supplied(w, args.h);
    }
    Err(ReconError::MissingInput {
        method: args.method.clone(),
        flag: "--residuals or --cov-file".into(),
    })
}

/// Row-aligned training panel for the regression-style methods. Actuals
/// must be coherent observations; fitted rows may be incoherent.
fn training_panel(
    args: &ReconcileArgs,
    sm: &SummingMatrix,
    alignment: Alignment,
) -> Result<TrainingPanel> {
    let (Some(actuals), Some(fitted)) = (&args.actuals, &args.fitted) else {
        return Err(ReconError::MissingInput {
            method: args.method.clone(),
            flag: "--actuals and --fitted".into(),
        });
    };
    let actual_panel = io::read_panel_csv(actuals, sm)?;
    let (fitted_index, fitted_mat) = io::read_table_csv(fitted, sm)?;
    if fitted_index != actual_panel.time_index {
        return Err(ReconError::MisalignedRows(
            "--actuals and --fitted time indices differ".into(),
        ));
    }
    TrainingPanel::new(
        alignment,
        actual_panel.b.clone(),
        fitted_mat,
        sm,
        args.h,
        None,
    )
}

fn build_map(args: &ReconcileArgs, sm: &SummingMatrix) -> Result<ReconciliationMap> {
    match args.method.as_str() {
        "bu" => g_bottom_up(sm),
        "ols" => g_ols(sm),
        "wls" => g_wls(sm, &weight_estimate(args, sm)?),
        "mint_sample" | "mint_shrink" => g_mint(sm, &weight_estimate(args, sm)?),
        "gls" => g_gls(sm, &weight_estimate(args, sm)?, true),
        "erm" => g_erm(&training_panel(args, sm, Alignment::Holdout)?),
        "emint_u" => g_emint_u(&training_panel(args, sm, Alignment::Insample)?),
        other => Err(ReconError::ConfigError(format!("unknown method {other}"))),
    }
}

/// The reconciled rows must satisfy every aggregation constraint; a
/// violation here is an internal defect, never a user error.
fn assert_coherent(recon: &DMatrix<f64>, sm: &SummingMatrix) -> Result<()> {
    if sm.m_star == 0 {
        return Ok(());
    }
    let residual = recon * sm.u_t.transpose();
    let viol = residual.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let scale = recon.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    if viol > 1e-8 * scale {
        return Err(ReconError::IncoherentOutput(viol));
    }
    Ok(())
}

pub fn run(args: &ReconcileArgs) -> Result<()> {
    let spec = io::read_hierarchy_csv(&args.hierarchy)?;
    let sm = build_summing_matrix(&spec)?;
    let (time_index, base) = io::read_table_csv(&args.base, &sm)?;
    let map = build_map(args, &sm)?;
    let recon = apply(&map, &sm, &base)?;
    assert_coherent(&recon, &sm)?;

    std::fs::create_dir_all(&args.out_dir)?;
    io::write_g_csv(&args.out_dir.join("g.csv"), &map, &sm)?;

    let mut provenance = vec![
        ("method".to_string(), map.method_label()),
        ("h".to_string(), args.h.to_string()),
    ];
    if let Some(p) = &args.residuals {
        provenance.push(("weights_from_residuals".into(), p.display().to_string()));
    }
    if let Some(p) = &args.cov_file {
        provenance.push(("weights_from_file".into(), p.display().to_string()));
    }
    if let Some(p) = &args.actuals {
        provenance.push(("trained_on_actuals".into(), p.display().to_string()));
    }
    if let Some(p) = &args.fitted {
        provenance.push(("trained_on_fitted".into(), p.display().to_string()));
    }
    io::write_forecast_csv(
        &args.out_dir.join("reconciled.csv"),
        &recon,
        &time_index,
        &sm,
        &provenance,
    )?;

    println!(
        "reconciled {} row(s) with {}; wrote {}",
        recon.nrows(),
        map.method_label(),
        args.out_dir.display()
    );
    Ok(())
}
