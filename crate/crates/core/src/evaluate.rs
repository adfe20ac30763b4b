//! Forecast accuracy metrics (per-series MSE, percentage relative
//! improvement, per-level aggregation) and numerical verification of the
//! reconciliation guarantees: GLS/MinT equivalence, the trace and
//! per-series dominance of MinT over OLS and base forecasts, the
//! unconstrained-map improvement, and the in-sample fit ordering.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{sample_covariance, CovarianceEstimate};
use crate::error::{ReconError, Result};
use crate::hierarchy::SummingMatrix;
use crate::linalg;
use crate::reconcile::{
    apply, apply_vector, g_emint_u, g_gls, g_mint, g_ols, Alignment, TrainingPanel,
};
use crate::simulate::{McAccum, McCell};

/// Relative slack for positive/negative semidefiniteness and trace
/// comparisons: the proofs are exact, floating point is not.
pub const EIG_TOL_REL: f64 = 1e-9;

/// Max-norm agreement required between maps that are provably equal.
pub const MAP_EQUALITY_TOL: f64 = 1e-7;

/// Which rows a report's errors were measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Insample,
    OutOfSample,
}

impl SampleKind {
    pub fn label(&self) -> &'static str {
        match self {
            SampleKind::Insample => "insample",
            SampleKind::OutOfSample => "outofsample",
        }
    }
}

/// Per-series mean squared error: column means of squared prediction errors.
pub fn mse_table(actuals: &DMatrix<f64>, predictions: &DMatrix<f64>) -> Result<Vec<f64>> {
    if actuals.nrows() == 0 {
        return Err(ReconError::EmptyInput("MSE over zero rows".into()));
    }
    if actuals.shape() != predictions.shape() {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{}x{}", actuals.nrows(), actuals.ncols()),
            actual: format!("{}x{}", predictions.nrows(), predictions.ncols()),
        });
    }
    let t = actuals.nrows() as f64;
    Ok((0..actuals.ncols())
        .map(|j| {
            let mut sum = linalg::KahanSum::new();
            for i in 0..actuals.nrows() {
                let e = actuals[(i, j)] - predictions[(i, j)];
                sum.add(e * e);
            }
            sum.value() / t
        })
        .collect())
}

/// 100·(method/reference − 1) per entry; negative values are improvements.
pub fn percent_relative_improvement(method_mse: &[f64], reference_mse: &[f64]) -> Result<Vec<f64>> {
    if method_mse.len() != reference_mse.len() {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{} entries", reference_mse.len()),
            actual: format!("{}", method_mse.len()),
        });
    }
    reference_mse
        .iter()
        .zip(method_mse.iter())
        .enumerate()
        .map(|(i, (&r, &m))| {
            if !r.is_finite() || r <= 0.0 {
                return Err(ReconError::ZeroReference(format!("position {i}")));
            }
            Ok(100.0 * (m / r - 1.0))
        })
        .collect()
}

/// Groups series indices by hierarchy level, ordered from the top
/// aggregate down to the bottom level, with display names.
pub fn level_groups(levels: &[usize]) -> (Vec<String>, Vec<Vec<usize>>) {
    let max_h = levels.iter().copied().max().unwrap_or(0);
    let mut names = Vec::new();
    let mut groups = Vec::new();
    for h in (0..=max_h).rev() {
        let members: Vec<usize> = levels
            .iter()
            .enumerate()
            .filter(|(_, &lv)| lv == h)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        let name = if h == 0 {
            "Bottom".to_string()
        } else if h == max_h {
            "Top".to_string()
        } else {
            format!("Level {}", max_h - h)
        };
        names.push(name);
        groups.push(members);
    }
    (names, groups)
}

fn group_mean(values: &[f64], members: &[usize]) -> f64 {
    members.iter().map(|&i| values[i]).sum::<f64>() / members.len() as f64
}

/// MSE and improvement tables for a set of methods against one reference,
/// at per-series, per-level (unweighted mean over member series), and
/// overall granularity.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub sample_kind: SampleKind,
    pub reference_label: String,
    pub series_labels: Vec<String>,
    pub level_names: Vec<String>,
    pub methods: Vec<String>,
    pub reference_mse: Vec<f64>,
    pub reference_level_mse: Vec<f64>,
    pub reference_overall_mse: f64,
    /// method × series.
    pub per_series_mse: Vec<Vec<f64>>,
    /// method × level.
    pub per_level_mse: Vec<Vec<f64>>,
    /// One entry per method.
    pub overall_mse: Vec<f64>,
    pub pri_per_series: Vec<Vec<f64>>,
    pub pri_per_level: Vec<Vec<f64>>,
    pub pri_overall: Vec<f64>,
}

impl EvaluationReport {
    /// Assembles all tables from per-series MSE vectors.
    pub fn build(
        sample_kind: SampleKind,
        reference_label: impl Into<String>,
        reference_mse: Vec<f64>,
        methods: Vec<(String, Vec<f64>)>,
        series_labels: Vec<String>,
        levels: &[usize],
    ) -> Result<Self> {
        let m = series_labels.len();
        if reference_mse.len() != m || levels.len() != m {
            return Err(ReconError::DimensionMismatch {
                expected: format!("{m} series"),
                actual: format!(
                    "{} reference entries, {} levels",
                    reference_mse.len(),
                    levels.len()
                ),
            });
        }
        if methods.is_empty() {
            return Err(ReconError::EmptyInput("no methods to evaluate".into()));
        }
        let (level_names, groups) = level_groups(levels);
        let reference_level_mse: Vec<f64> =
            groups.iter().map(|g| group_mean(&reference_mse, g)).collect();
        let reference_overall_mse = reference_mse.iter().sum::<f64>() / m as f64;

        let mut method_names = Vec::with_capacity(methods.len());
        let mut per_series = Vec::with_capacity(methods.len());
        let mut per_level = Vec::with_capacity(methods.len());
        let mut overall = Vec::with_capacity(methods.len());
        let mut pri_series = Vec::with_capacity(methods.len());
        let mut pri_level = Vec::with_capacity(methods.len());
        let mut pri_overall = Vec::with_capacity(methods.len());
        for (name, mse) in methods {
            if mse.len() != m {
                return Err(ReconError::DimensionMismatch {
                    expected: format!("{m} series"),
                    actual: format!("{} entries for method {name}", mse.len()),
                });
            }
            let lvl: Vec<f64> = groups.iter().map(|g| group_mean(&mse, g)).collect();
            let ovl = mse.iter().sum::<f64>() / m as f64;
            pri_series.push(percent_relative_improvement(&mse, &reference_mse)?);
            pri_level.push(percent_relative_improvement(&lvl, &reference_level_mse)?);
            pri_overall
                .push(percent_relative_improvement(&[ovl], &[reference_overall_mse])?[0]);
            method_names.push(name);
            per_series.push(mse);
            per_level.push(lvl);
            overall.push(ovl);
        }
        Ok(Self {
            sample_kind,
            reference_label: reference_label.into(),
            series_labels,
            level_names,
            methods: method_names,
            reference_mse,
            reference_level_mse,
            reference_overall_mse,
            per_series_mse: per_series,
            per_level_mse: per_level,
            overall_mse: overall,
            pri_per_series: pri_series,
            pri_per_level: pri_level,
            pri_overall,
        })
    }

    /// Builds the report for one Monte Carlo cell, using the unreconciled
    /// base forecasts as the improvement reference.
    pub fn from_cell(
        cell: &McCell,
        series_labels: &[String],
        levels: &[usize],
        sample_kind: SampleKind,
    ) -> Result<Self> {
        let mse_of = |accum: &McAccum| -> Result<Vec<f64>> {
            let rows = match sample_kind {
                SampleKind::Insample => accum.insample_rows,
                SampleKind::OutOfSample => accum.out_rows,
            };
            if rows == 0 {
                return Err(ReconError::EmptyInput(format!(
                    "cell {} accumulated no {} rows",
                    cell.label,
                    sample_kind.label()
                )));
            }
            let sse = match sample_kind {
                SampleKind::Insample => &accum.insample_sse,
                SampleKind::OutOfSample => &accum.out_sse,
            };
            Ok(sse.iter().map(|s| s / rows as f64).collect())
        };
        let reference = mse_of(&cell.base)?;
        let reference_label = match sample_kind {
            SampleKind::Insample => "base_fitted",
            SampleKind::OutOfSample => "base_forecast",
        };
        let methods = cell
            .methods
            .iter()
            .map(|(name, accum)| Ok((name.clone(), mse_of(accum)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::build(
            sample_kind,
            reference_label,
            reference,
            methods,
            series_labels.to_vec(),
            levels,
        )
    }
}

/// One named assertion inside a theorem check. `margin` is the amount by
/// which the assertion held; negative margins fail.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
}

/// Result of one numerical verification: instance descriptors, named
/// sub-assertions with margins, and scalar diagnostics.
#[derive(Debug, Clone)]
pub struct TheoremReport {
    pub check: String,
    pub m: usize,
    pub n: usize,
    pub m_star: usize,
    pub seed: Option<u64>,
    pub passed: bool,
    pub outcomes: Vec<CheckOutcome>,
    pub diagnostics: Vec<(String, f64)>,
}

impl TheoremReport {
    fn new(check: &str, sm: &SummingMatrix) -> Self {
        Self {
            check: check.to_string(),
            m: sm.m,
            n: sm.n,
            m_star: sm.m_star,
            seed: None,
            passed: true,
            outcomes: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    fn assert_margin(&mut self, name: &str, margin: f64) {
        let passed = margin >= 0.0;
        self.passed &= passed;
        self.outcomes.push(CheckOutcome {
            name: name.to_string(),
            passed,
            margin,
        });
    }

    fn note(&mut self, name: &str, value: f64) {
        self.diagnostics.push((name.to_string(), value));
    }

    /// Tags the report with the seed that generated its instance.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

fn require_psd(mat: &DMatrix<f64>, what: &str) -> Result<()> {
    linalg::require_symmetric(mat, 1e-8)?;
    let ev = linalg::sym_eigenvalues(mat);
    let max = ev.last().copied().unwrap_or(0.0).max(0.0);
    let min = ev.first().copied().unwrap_or(0.0);
    if min < -1e-8 * max.max(1.0) {
        return Err(ReconError::NotPositiveDefinite(format!(
            "{what} has eigenvalue {min}"
        )));
    }
    Ok(())
}

/// Checks that reconciling with the full base-error covariance
/// W = SΩSᵀ + Σ equals reconciling with the coherence-error covariance Σ
/// alone, and that both match the direct J/U closed form
/// J − JΣU(UᵀΣU)⁻¹Uᵀ.
pub fn check_gls_mint_equivalence(
    sm: &SummingMatrix,
    omega: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<TheoremReport> {
    if omega.nrows() != sm.n || omega.ncols() != sm.n {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{0}x{0} omega", sm.n),
            actual: format!("{}x{}", omega.nrows(), omega.ncols()),
        });
    }
    require_psd(omega, "bottom-level covariance")?;
    if sigma.clone().cholesky().is_none() {
        return Err(ReconError::NotPositiveDefinite(
            "coherence-error covariance".into(),
        ));
    }
    let mut w = &sm.s * omega * sm.s.transpose() + sigma;
    linalg::symmetrize(&mut w);
    let mut sigma_sym = sigma.clone();
    linalg::symmetrize(&mut sigma_sym);

    let g_w = g_mint(sm, &CovarianceEstimate::user_supplied(w, 1)?)?;
    let g_s = g_gls(sm, &CovarianceEstimate::user_supplied(sigma_sym.clone(), 1)?, false)?;
    let g_ju = if sm.m_star == 0 {
        sm.j.clone()
    } else {
        let u = sm.u_t.transpose();
        let usu = sm.u_t.clone() * sigma * &u;
        let x = linalg::chol_solve(&usu, &sm.u_t, "U'SigmaU")?;
        &sm.j - (&sm.j * sigma * &u) * x
    };

    let mut report = TheoremReport::new("gls_mint_equivalence", sm);
    let d_full = linalg::max_abs(&(&g_w.g - &g_s.g));
    let d_ju_gls = linalg::max_abs(&(&g_ju - &g_s.g));
    let d_ju_mint = linalg::max_abs(&(&g_ju - &g_w.g));
    report.assert_margin("mint_full_equals_gls", MAP_EQUALITY_TOL - d_full);
    report.assert_margin("ju_form_equals_gls", MAP_EQUALITY_TOL - d_ju_gls);
    report.assert_margin("ju_form_equals_mint", MAP_EQUALITY_TOL - d_ju_mint);
    report.note("max_diff_mint_gls", d_full);
    report.note("max_diff_ju_gls", d_ju_gls);
    report.note("max_diff_ju_mint", d_ju_mint);
    Ok(report)
}

/// Verifies the population dominance of trace-minimal reconciliation: the
/// reconciled-error covariances satisfy tr(V_MinT) ≤ tr(V_OLS) ≤ tr(W)
/// (strictly below tr(W) when aggregates exist), elementwise diagonal
/// dominance, and the explicit PSD decomposition of V_OLS − V_MinT.
pub fn check_theorem1(sm: &SummingMatrix, w: &DMatrix<f64>) -> Result<TheoremReport> {
    if w.clone().cholesky().is_none() {
        return Err(ReconError::NotPositiveDefinite(
            "base-error covariance".into(),
        ));
    }
    let ols = g_ols(sm)?;
    let mut w_sym = w.clone();
    linalg::symmetrize(&mut w_sym);
    let mint = g_mint(sm, &CovarianceEstimate::user_supplied(w_sym, 1)?)?;
    let p_ols = &sm.s * &ols.g;
    let p_mint = &sm.s * &mint.g;
    let mut v_ols = &p_ols * w * p_ols.transpose();
    let mut v_mint = &p_mint * w * p_mint.transpose();
    linalg::symmetrize(&mut v_ols);
    linalg::symmetrize(&mut v_mint);

    let tr_w = w.trace();
    let tr_ols = v_ols.trace();
    let tr_mint = v_mint.trace();
    let scale = linalg::max_abs(w).max(1e-300);
    let tol = EIG_TOL_REL * scale;

    let mut report = TheoremReport::new("theorem1_trace_dominance", sm);
    report.note("trace_base", tr_w);
    report.note("trace_ols", tr_ols);
    report.note("trace_mint", tr_mint);

    report.assert_margin("mint_trace_at_most_ols", tr_ols + EIG_TOL_REL * tr_w - tr_mint);
    if sm.m_star > 0 {
        report.assert_margin("ols_trace_strictly_below_base", tr_w - tr_ols);
    } else {
        report.assert_margin(
            "square_structure_traces_equal",
            EIG_TOL_REL * tr_w - (tr_w - tr_ols).abs(),
        );
    }

    let mut margin_vs_ols = f64::INFINITY;
    let mut margin_vs_base = f64::INFINITY;
    for i in 0..sm.m {
        margin_vs_ols = margin_vs_ols.min(v_ols[(i, i)] + tol - v_mint[(i, i)]);
        margin_vs_base = margin_vs_base.min(w[(i, i)] + tol - v_mint[(i, i)]);
        report.note(&format!("diag_gap_ols_minus_mint_{i}"), v_ols[(i, i)] - v_mint[(i, i)]);
    }
    report.assert_margin("mint_diag_at_most_ols", margin_vs_ols);
    report.assert_margin("mint_diag_at_most_base", margin_vs_base);

    // D = S(SᵀS)⁻¹ − W⁻¹S(SᵀW⁻¹S)⁻¹ reconstructs the trace gap exactly:
    // V_OLS − V_MinT = S Dᵀ W D Sᵀ, which is PSD by construction.
    let sts = sm.s.transpose() * &sm.s;
    let s_sts_inv = linalg::chol_solve(&sts, &sm.s.transpose(), "S'S")?.transpose();
    let w_inv_s = linalg::chol_solve(w, &sm.s, "W")?;
    let gram = sm.s.transpose() * &w_inv_s;
    let w_inv_s_gram_inv = linalg::chol_solve(&gram, &w_inv_s.transpose(), "S'W^-1S")?.transpose();
    let d = s_sts_inv - w_inv_s_gram_inv;
    let mut formed = &sm.s * (d.transpose() * w * &d) * sm.s.transpose();
    linalg::symmetrize(&mut formed);

    let mut gap = &v_ols - &v_mint;
    linalg::symmetrize(&mut gap);
    let identity_err = linalg::max_abs(&(&gap - &formed));
    report.assert_margin("difference_identity", 1e-8 * scale - identity_err);
    let min_eig = linalg::sym_eigenvalues(&gap).first().copied().unwrap_or(0.0);
    report.assert_margin("difference_psd", min_eig + tol);
    report.note("difference_identity_error", identity_err);
    report.note("difference_min_eigenvalue", min_eig);
    Ok(report)
}

/// Verifies that dropping the projection constraint can only help: the
/// offset Δ* = U(UᵀVU)⁻¹Uᵀ − V⁻¹ is negative semidefinite, and so is the
/// induced MSE difference Δ = S·C·Δ*·Cᵀ·Sᵀ for any cross-moment C.
pub fn check_theorem2(
    sm: &SummingMatrix,
    v: &DMatrix<f64>,
    cross: &DMatrix<f64>,
) -> Result<TheoremReport> {
    if v.nrows() != sm.m || v.ncols() != sm.m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{0}x{0} covariance", sm.m),
            actual: format!("{}x{}", v.nrows(), v.ncols()),
        });
    }
    if cross.nrows() != sm.n || cross.ncols() != sm.m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{}x{} cross-moment", sm.n, sm.m),
            actual: format!("{}x{}", cross.nrows(), cross.ncols()),
        });
    }
    let chol = v
        .clone()
        .cholesky()
        .ok_or_else(|| ReconError::NotPositiveDefinite("forecast second-moment matrix".into()))?;
    let v_inv = chol.solve(&DMatrix::identity(sm.m, sm.m));

    let mut delta_star = if sm.m_star == 0 {
        -&v_inv
    } else {
        let u = sm.u_t.transpose();
        let uvu = sm.u_t.clone() * v * &u;
        if uvu.clone().cholesky().is_none() {
            return Err(ReconError::NotPositiveDefinite("U'VU".into()));
        }
        let x = linalg::chol_solve(&uvu, &sm.u_t, "U'VU")?;
        u * x - &v_inv
    };
    linalg::symmetrize(&mut delta_star);

    let mut delta = &sm.s * cross * &delta_star * cross.transpose() * sm.s.transpose();
    linalg::symmetrize(&mut delta);

    let mut report = TheoremReport::new("theorem2_unconstrained_gain", sm);
    let star_scale = linalg::max_abs(&delta_star).max(linalg::max_abs(&v_inv)).max(1e-300);
    let star_max = linalg::sym_eigenvalues(&delta_star).last().copied().unwrap_or(0.0);
    report.assert_margin("offset_nsd", EIG_TOL_REL * star_scale - star_max);
    report.note("offset_max_eigenvalue", star_max);

    let delta_scale = linalg::max_abs(&delta).max(1e-300);
    let delta_max = linalg::sym_eigenvalues(&delta).last().copied().unwrap_or(0.0);
    report.assert_margin("difference_nsd", EIG_TOL_REL * delta_scale - delta_max);
    report.note("difference_max_eigenvalue", delta_max);

    let diag_max = (0..sm.m).map(|i| delta[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    report.assert_margin(
        "difference_diagonal_nonpositive",
        EIG_TOL_REL * delta_scale - diag_max,
    );
    report.note("difference_max_diagonal", diag_max);
    Ok(report)
}

/// Verifies the in-sample fit ordering at h = 1: the unconstrained
/// least-squares map attains total in-sample squared reconciled error no
/// larger than the sample-covariance trace-minimal projection on the
/// same rows.
pub fn check_remark2(panel: &TrainingPanel, sm: &SummingMatrix) -> Result<TheoremReport> {
    if panel.alignment != Alignment::Insample {
        return Err(ReconError::MisalignedRows(
            "in-sample fit check requires an insample-aligned panel".into(),
        ));
    }
    if panel.h != 1 {
        return Err(ReconError::ConfigError(format!(
            "in-sample fit check requires horizon 1, got {}",
            panel.h
        )));
    }
    let mut report = TheoremReport::new("remark2_insample_fit", sm);
    let residuals = &panel.y_mat - &panel.yhat_mat;
    if linalg::max_abs(&residuals) == 0.0 {
        // Perfect fitted values: every map reproduces the actuals and both
        // totals are exactly zero.
        report.note("emint_u_sse", 0.0);
        report.note("mint_sample_sse", 0.0);
        report.assert_margin("insample_total_sse", 0.0);
        return Ok(report);
    }

    let emint = g_emint_u(panel)?;
    let w = sample_covariance(&residuals)?;
    let mint = g_mint(sm, &w)?;

    let recon_e = apply(&emint, sm, &panel.yhat_mat)?;
    let recon_m = apply(&mint, sm, &panel.yhat_mat)?;
    let sse_e = (&panel.y_mat - recon_e).norm_squared();
    let sse_m = (&panel.y_mat - recon_m).norm_squared();
    report.note("emint_u_sse", sse_e);
    report.note("mint_sample_sse", sse_m);
    report.assert_margin("insample_total_sse", sse_m * (1.0 + EIG_TOL_REL) - sse_e);
    Ok(report)
}

/// Per-realization Euclidean guarantee of the orthogonal projection:
/// ‖actual − S·G_OLS·base‖₂ ≤ ‖actual − base‖₂ for every base vector,
/// provided `actual_row` is coherent (realized observations always are).
/// For targets outside the coherent subspace the inequality can fail,
/// and the returned report records that honestly.
pub fn check_ols_distance(
    sm: &SummingMatrix,
    base_row: &DVector<f64>,
    actual_row: &DVector<f64>,
) -> Result<TheoremReport> {
    if base_row.len() != sm.m || actual_row.len() != sm.m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("length-{} vectors", sm.m),
            actual: format!("{} and {}", base_row.len(), actual_row.len()),
        });
    }
    let ols = g_ols(sm)?;
    let recon = apply_vector(&ols, sm, base_row)?;
    let d_recon = (actual_row - recon).norm();
    let d_base = (actual_row - base_row).norm();
    let mut report = TheoremReport::new("ols_euclidean_dominance", sm);
    report.note("distance_base", d_base);
    report.note("distance_reconciled", d_recon);
    report.assert_margin(
        "euclidean_dominance",
        d_base + 1e-10 * actual_row.norm() - d_recon,
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basemodels::build_forecast_panel;
    use crate::hierarchy::{build_summing_matrix, figure1_spec, HierarchySpec};
    use crate::simulate::{
        random_normal_matrix, random_spd, run_monte_carlo, simulate_var1, small_design_coeff,
        small_design_cov, small_design_hierarchy, McDesign, Var1Config,
    };
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn figure1() -> SummingMatrix {
        build_summing_matrix(&figure1_spec()).unwrap()
    }

    fn bottoms_only(n: usize) -> SummingMatrix {
        let ids: Vec<String> = (0..n).map(|i| format!("X{i}")).collect();
        build_summing_matrix(&HierarchySpec::new(vec![], ids)).unwrap()
    }

    #[test]
    fn mse_is_zero_for_identical_predictions() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mse_table(&a, &a).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mse_single_row_squares_the_errors() {
        let actual = DMatrix::from_row_slice(1, 2, &[3.0, 1.0]);
        let pred = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        assert_eq!(mse_table(&actual, &pred).unwrap(), vec![1.0, 4.0]);
    }

    #[test]
    fn mse_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let actual = random_normal_matrix(&mut rng, 10, 3);
        let pred = random_normal_matrix(&mut rng, 10, 3);
        let got = mse_table(&actual, &pred).unwrap();
        for j in 0..3 {
            let mut acc = 0.0;
            for i in 0..10 {
                let e = actual[(i, j)] - pred[(i, j)];
                acc += e * e;
            }
            assert!((got[j] - acc / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_rejects_bad_shapes() {
        let a = DMatrix::zeros(0, 2);
        assert!(matches!(
            mse_table(&a, &a),
            Err(ReconError::EmptyInput(_))
        ));
        let b = DMatrix::zeros(2, 2);
        let c = DMatrix::zeros(2, 3);
        assert!(matches!(
            mse_table(&b, &c),
            Err(ReconError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn improvement_is_exact_for_simple_ratios() {
        assert_eq!(
            percent_relative_improvement(&[2.0, 5.0], &[2.0, 5.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let got = percent_relative_improvement(&[1.8], &[2.0]).unwrap();
        assert!((got[0] + 10.0).abs() < 1e-12);
        assert!(matches!(
            percent_relative_improvement(&[1.0], &[0.0]),
            Err(ReconError::ZeroReference(_))
        ));
        // Monotone in the method MSE for a fixed reference.
        let lo = percent_relative_improvement(&[1.0], &[2.0]).unwrap()[0];
        let hi = percent_relative_improvement(&[1.5], &[2.0]).unwrap()[0];
        assert!(lo < hi);
    }

    #[test]
    fn level_groups_order_top_to_bottom() {
        let sm = figure1();
        let (names, groups) = level_groups(&sm.levels);
        assert_eq!(names, vec!["Top", "Level 1", "Bottom"]);
        assert_eq!(groups[0], vec![0]);
        assert_eq!(groups[1], vec![1, 2]);
        assert_eq!(groups[2], vec![3, 4, 5, 6, 7]);
    }

    #[test]
    fn report_aggregates_levels_with_unweighted_means() {
        let sm = figure1();
        let reference = vec![4.0; sm.m];
        let mse: Vec<f64> = (0..sm.m).map(|i| (i + 1) as f64).collect();
        let report = EvaluationReport::build(
            SampleKind::OutOfSample,
            "base",
            reference,
            vec![("toy".into(), mse.clone())],
            sm.labels.clone(),
            &sm.levels,
        )
        .unwrap();
        assert_eq!(report.per_level_mse[0][0], 1.0);
        assert!((report.per_level_mse[0][1] - 2.5).abs() < 1e-12);
        assert!((report.per_level_mse[0][2] - 6.0).abs() < 1e-12);
        let overall = mse.iter().sum::<f64>() / sm.m as f64;
        assert!((report.overall_mse[0] - overall).abs() < 1e-12);
        assert!((report.pri_overall[0] - 100.0 * (overall / 4.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gls_mint_equivalence_holds_for_zero_omega() {
        let sm = figure1();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigma = random_spd(&mut rng, sm.m, 0.5);
        let report =
            check_gls_mint_equivalence(&sm, &DMatrix::zeros(sm.n, sm.n), &sigma).unwrap();
        assert!(report.passed, "{:?}", report.outcomes);
    }

    #[test]
    fn gls_mint_equivalence_random_sweep() {
        let sm = figure1();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let omega = random_spd(&mut rng, sm.n, 0.1);
            let sigma = random_spd(&mut rng, sm.m, 0.5);
            let report = check_gls_mint_equivalence(&sm, &omega, &sigma)
                .unwrap()
                .with_seed(seed);
            assert!(report.passed, "seed {seed}: {:?}", report.outcomes);
        }
    }

    #[test]
    fn isotropic_coherence_errors_reduce_gls_to_ols() {
        let sm = figure1();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let omega = random_spd(&mut rng, sm.n, 0.1);
        let eye = DMatrix::identity(sm.m, sm.m);
        let report = check_gls_mint_equivalence(&sm, &omega, &eye).unwrap();
        assert!(report.passed);
        let est = CovarianceEstimate::user_supplied(eye, 1).unwrap();
        let gls = g_gls(&sm, &est, false).unwrap();
        let ols = g_ols(&sm).unwrap();
        assert!(linalg::max_abs(&(gls.g - ols.g)) < 1e-10);
    }

    #[test]
    fn identity_covariance_gives_zero_trace_gap() {
        let sm = figure1();
        let report = check_theorem1(&sm, &DMatrix::identity(sm.m, sm.m)).unwrap();
        assert!(report.passed, "{:?}", report.outcomes);
        let get = |name: &str| {
            report
                .diagnostics
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| *v)
                .unwrap()
        };
        assert!((get("trace_ols") - get("trace_mint")).abs() < 1e-9);
        assert!(get("trace_ols") < get("trace_base"));
    }

    #[test]
    fn square_structure_has_equal_traces() {
        let sm = bottoms_only(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_spd(&mut rng, 3, 0.2);
        let report = check_theorem1(&sm, &w).unwrap();
        assert!(report.passed, "{:?}", report.outcomes);
        let traces: Vec<f64> = report
            .diagnostics
            .iter()
            .filter(|(k, _)| k.starts_with("trace_"))
            .map(|(_, v)| *v)
            .collect();
        assert!((traces[0] - traces[1]).abs() < 1e-9);
        assert!((traces[0] - traces[2]).abs() < 1e-9);
    }

    #[test]
    fn trace_dominance_holds_on_random_sweep() {
        let sm = figure1();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_spd(&mut rng, sm.m, 0.05);
            let report = check_theorem1(&sm, &w).unwrap().with_seed(seed);
            assert!(report.passed, "seed {seed}: {:?}", report.outcomes);
        }
    }

    #[test]
    fn theorem1_rejects_indefinite_w() {
        let sm = figure1();
        let mut w = DMatrix::identity(sm.m, sm.m);
        w[(0, 0)] = -1.0;
        assert!(matches!(
            check_theorem1(&sm, &w),
            Err(ReconError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn zero_cross_moment_gives_zero_difference() {
        let sm = figure1();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_spd(&mut rng, sm.m, 0.3);
        let cross = DMatrix::zeros(sm.n, sm.m);
        let report = check_theorem2(&sm, &v, &cross).unwrap();
        assert!(report.passed);
        let max_diag = report
            .diagnostics
            .iter()
            .find(|(k, _)| k == "difference_max_diagonal")
            .map(|(_, v)| *v)
            .unwrap();
        assert_eq!(max_diag, 0.0);
    }

    #[test]
    fn identity_v_offset_is_projector_minus_identity() {
        let sm = figure1();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cross = random_normal_matrix(&mut rng, sm.n, sm.m);
        let report = check_theorem2(&sm, &DMatrix::identity(sm.m, sm.m), &cross).unwrap();
        assert!(report.passed, "{:?}", report.outcomes);
        let max_eig = report
            .diagnostics
            .iter()
            .find(|(k, _)| k == "offset_max_eigenvalue")
            .map(|(_, v)| *v)
            .unwrap();
        // Eigenvalues of the normalized-projector offset lie in {−1, 0}.
        assert!(max_eig.abs() < 1e-10);
    }

    #[test]
    fn unconstrained_gain_holds_on_random_sweep() {
        let sm = figure1();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_spd(&mut rng, sm.m, 0.2);
            let cross = random_normal_matrix(&mut rng, sm.n, sm.m);
            let report = check_theorem2(&sm, &v, &cross).unwrap().with_seed(seed);
            assert!(report.passed, "seed {seed}: {:?}", report.outcomes);
        }
    }

    #[test]
    fn perfect_fitted_values_short_circuit_the_fit_check() {
        let sm = figure1();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = random_normal_matrix(&mut rng, 30, sm.n);
        let y = &b * sm.s.transpose();
        let panel = TrainingPanel::new(Alignment::Insample, b, y, &sm, 1, None).unwrap();
        let report = check_remark2(&panel, &sm).unwrap();
        assert!(report.passed);
        for (_, v) in &report.diagnostics {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn insample_fit_ordering_holds_on_simulated_replications() {
        // The ordering is claimed only where the fitted-value Gram matrix is
        // numerically positive definite; replications where order selection
        // produces collinear fitted columns are counted and excluded.
        let spec = small_design_hierarchy();
        let sm = build_summing_matrix(&spec).unwrap();
        let mut evaluated = 0usize;
        let mut singular = 0usize;
        for rep in 0..50 {
            let cfg = Var1Config {
                coeff: small_design_coeff(),
                innov_cov: small_design_cov(0.5).unwrap(),
                t_total: 101,
                burn_in: 100,
                seed: 1000 ^ rep,
            };
            let panel = simulate_var1(&cfg, &sm).unwrap();
            let fp = build_forecast_panel(&panel.y, &sm.labels, 1, 5).unwrap();
            let rows = panel.y.nrows() - fp.fitted_start;
            let tp = TrainingPanel::new(
                Alignment::Insample,
                panel.b.rows(fp.fitted_start, rows).into_owned(),
                fp.fitted.clone(),
                &sm,
                1,
                None,
            )
            .unwrap();
            match check_remark2(&tp, &sm) {
                Ok(report) => {
                    evaluated += 1;
                    assert!(report.passed, "replication {rep}: {:?}", report.outcomes);
                }
                Err(ReconError::SingularGram(_)) => singular += 1,
                Err(other) => panic!("replication {rep}: unexpected error {other}"),
            }
        }
        assert!(
            evaluated >= 40,
            "too few well-posed replications: {evaluated} evaluated, {singular} singular"
        );
    }

    #[test]
    fn near_interpolation_fit_ordering_holds() {
        // Row count barely above the bottom dimension; Gram still PD
        // because the forecasts carry an incoherent component.
        let spec = HierarchySpec::new(
            vec![("T".into(), vec!["a".into(), "b".into()])],
            vec!["a".into(), "b".into()],
        );
        let sm = build_summing_matrix(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random_normal_matrix(&mut rng, 4, sm.n);
        let yhat = &b * sm.s.transpose() + random_normal_matrix(&mut rng, 4, sm.m) * 0.4;
        let panel = TrainingPanel::new(Alignment::Insample, b, yhat, &sm, 1, None).unwrap();
        let report = check_remark2(&panel, &sm).unwrap();
        assert!(report.passed, "{:?}", report.outcomes);
    }

    #[test]
    fn coherent_base_forecasts_reconcile_at_equal_distance() {
        let sm = figure1();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random_normal_matrix(&mut rng, 1, sm.n);
        let base = (&b * sm.s.transpose()).row(0).transpose();
        let actual =
            DVector::from_fn(sm.m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let report = check_ols_distance(&sm, &base, &actual).unwrap();
        assert!(report.passed);
        let d_base = report.diagnostics.iter().find(|(k, _)| k == "distance_base").unwrap().1;
        let d_rec = report
            .diagnostics
            .iter()
            .find(|(k, _)| k == "distance_reconciled")
            .unwrap()
            .1;
        assert!((d_base - d_rec).abs() < 1e-10);
    }

    #[test]
    fn anti_coherent_perturbations_are_projected_away() {
        let sm = figure1();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random_normal_matrix(&mut rng, 1, sm.n);
        let actual = (&b * sm.s.transpose()).row(0).transpose();
        // The columns of U span the orthogonal complement of col(S).
        let z = DVector::from_fn(sm.m_star, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let base = &actual + sm.u_t.transpose() * z;
        let report = check_ols_distance(&sm, &base, &actual).unwrap();
        assert!(report.passed);
        let d_rec = report
            .diagnostics
            .iter()
            .find(|(k, _)| k == "distance_reconciled")
            .unwrap()
            .1;
        assert!(d_rec < 1e-8, "residual distance {d_rec}");
    }

    #[test]
    fn euclidean_dominance_holds_on_random_pairs() {
        // The dominance property is a fact about orthogonal projection onto
        // the coherent subspace, so the target must live in that subspace:
        // realized observations always do. Base forecasts are unrestricted.
        let sm = figure1();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let base =
                DVector::from_fn(sm.m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let b =
                DVector::from_fn(sm.n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let actual = &sm.s * b;
            let report = check_ols_distance(&sm, &base, &actual).unwrap();
            assert!(report.passed, "{:?}", report.outcomes);
        }
    }

    #[test]
    fn incoherent_targets_can_defeat_the_distance_check() {
        // Counterexample guard: with a target outside the coherent subspace
        // the projection can move the forecast away from it, so the check is
        // only meaningful for coherent actuals.
        let sm = figure1();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut failures = 0usize;
        for _ in 0..200 {
            let base =
                DVector::from_fn(sm.m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let actual =
                DVector::from_fn(sm.m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let report = check_ols_distance(&sm, &base, &actual).unwrap();
            if !report.passed {
                failures += 1;
            }
        }
        assert!(failures > 0, "expected at least one incoherent-target failure");
    }

    #[test]
    fn monte_carlo_report_pins_bottom_up_bottom_level_to_zero() {
        let design = McDesign::small(3, vec![101], vec![0.0], 44, 5).unwrap();
        let result = run_monte_carlo(&design).unwrap();
        let cell = &result.cells[0];
        for kind in [SampleKind::Insample, SampleKind::OutOfSample] {
            let report =
                EvaluationReport::from_cell(cell, &result.series_labels, &result.levels, kind)
                    .unwrap();
            assert_eq!(report.level_names, vec!["Top", "Level 1", "Bottom"]);
            let bu = report.methods.iter().position(|m| m == "bu").unwrap();
            let bottom = report.level_names.iter().position(|n| n == "Bottom").unwrap();
            assert_eq!(report.pri_per_level[bu][bottom], 0.0);
            for (i, &level) in result.levels.iter().enumerate() {
                if level == 0 {
                    assert_eq!(report.pri_per_series[bu][i], 0.0);
                }
            }
        }
    }
}
