//! Construction of every reconciliation map G and its application to base
//! forecasts. All maps share the contract: reconciled = S·G·ŷ.

use std::fmt;

use nalgebra::DMatrix;

use crate::covariance::{pseudo_inverse, CovKind, CovarianceEstimate, RANK_TOL_DEFAULT};
use crate::error::{ReconError, Result};
use crate::hierarchy::SummingMatrix;
use crate::linalg;

/// Relative eigenvalue ratio below which ŶᵀŶ is treated as singular.
pub const GRAM_PD_RATIO: f64 = 1e-10;

/// Which estimator produced a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bu,
    Ols,
    Wls,
    Gls,
    MinT,
    Erm,
    EmintU,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Bu => "bu",
            Method::Ols => "ols",
            Method::Wls => "wls",
            Method::Gls => "gls",
            Method::MinT => "mint",
            Method::Erm => "erm",
            Method::EmintU => "emint_u",
        };
        f.write_str(name)
    }
}

/// An n×m map from base forecasts to revised bottom-level forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconciliationMap {
    pub g: DMatrix<f64>,
    pub method: Method,
    /// Whether G S = I_n holds (checked at construction when claimed).
    pub is_projection: bool,
    pub h: usize,
    /// Provenance of the covariance or regression inputs, when any.
    pub cov_kind: Option<CovKind>,
}

impl ReconciliationMap {
    /// Canonical method name, distinguishing the minimum-trace map by its
    /// covariance provenance (`mint_sample` vs `mint_shrink`).
    pub fn method_label(&self) -> String {
        match (self.method, self.cov_kind) {
            (Method::MinT, Some(CovKind::Sample)) => "mint_sample".into(),
            (Method::MinT, Some(CovKind::Shrink)) => "mint_shrink".into(),
            (m, _) => m.to_string(),
        }
    }
}

fn require_finite(g: &DMatrix<f64>) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(ReconError::NonFiniteInput);
    }
    Ok(())
}

/// Wraps G as a projection map, verifying ‖GS − I‖_max < 1e-8.
fn projection_map(
    g: DMatrix<f64>,
    method: Method,
    h: usize,
    cov_kind: Option<CovKind>,
    sm: &SummingMatrix,
) -> Result<ReconciliationMap> {
    require_finite(&g)?;
    let gs = &g * &sm.s;
    let dev = linalg::max_abs(&(gs - DMatrix::identity(sm.n, sm.n)));
    if dev >= 1e-8 {
        return Err(ReconError::ProjectionViolated(dev));
    }
    Ok(ReconciliationMap {
        g,
        method,
        is_projection: true,
        h,
        cov_kind,
    })
}

/// Bottom-up: G = J = [0 | I_n].
pub fn g_bottom_up(sm: &SummingMatrix) -> Result<ReconciliationMap> {
    projection_map(sm.j.clone(), Method::Bu, 1, None, sm)
}

/// Ordinary least squares: G = (SᵀS)⁻¹Sᵀ, the orthogonal projection weights.
pub fn g_ols(sm: &SummingMatrix) -> Result<ReconciliationMap> {
    let sts = sm.s.transpose() * &sm.s;
    let g = linalg::chol_solve(&sts, &sm.s.transpose(), "S'S")
        .map_err(|_| ReconError::SingularGram("S'S".into()))?;
    projection_map(g, Method::Ols, 1, Some(CovKind::IdentityScaled), sm)
}

/// Weighted least squares with diagonal weights: G = (SᵀΛ⁻¹S)⁻¹SᵀΛ⁻¹.
pub fn g_wls(sm: &SummingMatrix, lam: &CovarianceEstimate) -> Result<ReconciliationMap> {
    if lam.dim() != sm.m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{}x{} covariance", sm.m, sm.m),
            actual: format!("{}x{}", lam.w.nrows(), lam.w.ncols()),
        });
    }
    for i in 0..sm.m {
        for j in 0..sm.m {
            if i != j && lam.w[(i, j)] != 0.0 {
                return Err(ReconError::NotDiagonal);
            }
        }
    }
    // Λ⁻¹S: scale row i of S by 1/λ_i.
    let mut linv_s = sm.s.clone();
    for i in 0..sm.m {
        let inv = 1.0 / lam.w[(i, i)];
        for j in 0..sm.n {
            linv_s[(i, j)] *= inv;
        }
    }
    let gram = sm.s.transpose() * &linv_s;
    let g = linalg::chol_solve(&gram, &linv_s.transpose(), "S'Lambda^-1 S")
        .map_err(|_| ReconError::SingularGram("S'Lambda^-1 S".into()))?;
    projection_map(g, Method::Wls, lam.h, Some(lam.kind), sm)
}

/// Minimum-trace map for a positive definite W. Both closed forms are
/// computed: G₁ = (SᵀW⁻¹S)⁻¹SᵀW⁻¹ and G₂ = J − J W U (UᵀWU)⁻¹Uᵀ. They must
/// agree to 1e-7; G₂ is returned because it only inverts an m*×m* matrix.
pub fn g_mint(sm: &SummingMatrix, w: &CovarianceEstimate) -> Result<ReconciliationMap> {
    if w.dim() != sm.m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{}x{} covariance", sm.m, sm.m),
            actual: format!("{}x{}", w.w.nrows(), w.w.ncols()),
        });
    }
    let chol_w = w
        .w
        .clone()
        .cholesky()
        .ok_or_else(|| ReconError::NotPositiveDefinite("W".into()))?;

    let winv_s = chol_w.solve(&sm.s);
    let gram = sm.s.transpose() * &winv_s;
    let g1 = linalg::chol_solve(&gram, &winv_s.transpose(), "S'W^-1 S")?;

    let g2 = if sm.m_star == 0 {
        sm.j.clone()
    } else {
        let u = sm.u_t.transpose();
        let wu = &w.w * &u;
        let utwu = sm.u_t.clone() * &wu;
        let chol_utwu = utwu
            .cholesky()
            .ok_or_else(|| ReconError::NotPositiveDefinite("U'WU".into()))?;
        let solved = chol_utwu.solve(&sm.u_t);
        &sm.j - (&sm.j * wu) * solved
    };

    let dev = linalg::max_abs(&(g1 - &g2));
    if dev >= 1e-7 {
        return Err(ReconError::DualFormMismatch(dev));
    }
    projection_map(g2, Method::MinT, w.h, Some(w.kind), sm)
}

/// Generalized least squares on the coherence-error covariance Σ:
/// G = (SᵀΣ†S)⁻¹SᵀΣ†. With `use_pinv` Σ may be singular (Moore–Penrose
/// inverse); otherwise Σ must be positive definite.
pub fn g_gls(
    sm: &SummingMatrix,
    sigma: &CovarianceEstimate,
    use_pinv: bool,
) -> Result<ReconciliationMap> {
    if sigma.dim() != sm.m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{}x{} covariance", sm.m, sm.m),
            actual: format!("{}x{}", sigma.w.nrows(), sigma.w.ncols()),
        });
    }
    let sigma_inv_s = if use_pinv {
        let pinv = pseudo_inverse(&sigma.w, RANK_TOL_DEFAULT)?;
        &pinv * &sm.s
    } else {
        let chol = sigma
            .w
            .clone()
            .cholesky()
            .ok_or_else(|| ReconError::NotPositiveDefinite("Sigma".into()))?;
        chol.solve(&sm.s)
    };
    let gram = sm.s.transpose() * &sigma_inv_s;
    let g = linalg::chol_solve(&gram, &sigma_inv_s.transpose(), "S'Sigma^+S")
        .map_err(|_| ReconError::RankDeficientReducedGram)?;
    projection_map(g, Method::Gls, sigma.h, Some(sigma.kind), sm)
}

/// Row alignment of a training panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Held-out rows T₁+h..T, base forecasts made from the training split.
    Holdout,
    /// In-sample rows h..T paired with h-step fitted values.
    Insample,
}

/// Aligned rows of bottom actuals, base forecasts, and full actuals used by
/// the regression-style estimators.
#[derive(Debug, Clone)]
pub struct TrainingPanel {
    /// Rows of bottom-level actuals b_t.
    pub b_mat: DMatrix<f64>,
    /// Rows of base forecasts or fitted values ŷ (all m series).
    pub yhat_mat: DMatrix<f64>,
    /// Rows of actuals y = S b, derived from `b_mat`.
    pub y_mat: DMatrix<f64>,
    pub alignment: Alignment,
    /// Holdout split index (rows before it were used for fitting).
    pub t1: Option<usize>,
    pub h: usize,
}

impl TrainingPanel {
    pub fn new(
        alignment: Alignment,
        b_mat: DMatrix<f64>,
        yhat_mat: DMatrix<f64>,
        sm: &SummingMatrix,
        h: usize,
        t1: Option<usize>,
    ) -> Result<Self> {
        if b_mat.ncols() != sm.n {
            return Err(ReconError::DimensionMismatch {
                expected: format!("{} bottom columns", sm.n),
                actual: format!("{}", b_mat.ncols()),
            });
        }
        if yhat_mat.ncols() != sm.m {
            return Err(ReconError::DimensionMismatch {
                expected: format!("{} forecast columns", sm.m),
                actual: format!("{}", yhat_mat.ncols()),
            });
        }
        if b_mat.nrows() != yhat_mat.nrows() {
            return Err(ReconError::MisalignedRows(format!(
                "{} actual rows vs {} forecast rows",
                b_mat.nrows(),
                yhat_mat.nrows()
            )));
        }
        if b_mat.nrows() == 0 {
            return Err(ReconError::EmptyPanel);
        }
        if b_mat.nrows() < sm.n {
            return Err(ReconError::TooFewRows {
                required: sm.n,
                actual: b_mat.nrows(),
            });
        }
        if b_mat.iter().any(|v| !v.is_finite()) || yhat_mat.iter().any(|v| !v.is_finite()) {
            return Err(ReconError::NonFiniteInput);
        }
        let y_mat = &b_mat * sm.s.transpose();
        Ok(Self {
            b_mat,
            yhat_mat,
            y_mat,
            alignment,
            t1,
            h,
        })
    }
}

/// Smallest/largest eigenvalue ratio test for the m×m Gram matrix ŶᵀŶ.
fn gram_is_pd(gram: &DMatrix<f64>) -> bool {
    let ev = linalg::sym_eigenvalues(gram);
    match (ev.first(), ev.last()) {
        (Some(&min), Some(&max)) => max > 0.0 && min > GRAM_PD_RATIO * max,
        _ => false,
    }
}

/// Empirical risk minimizer on a holdout panel: the unconstrained minimizer
/// of ‖Y − Ŷ Gᵀ Sᵀ‖_F. With full-rank ŶᵀŶ this is G = BᵀŶ(ŶᵀŶ)⁻¹; otherwise
/// the thin-SVD path returns the minimum-norm least-squares solution.
pub fn g_erm(panel: &TrainingPanel) -> Result<ReconciliationMap> {
    if panel.alignment != Alignment::Holdout {
        return Err(ReconError::MisalignedRows(
            "ERM requires a holdout-aligned panel".into(),
        ));
    }
    if panel.yhat_mat.nrows() == 0 {
        return Err(ReconError::EmptyPanel);
    }
    let gram = panel.yhat_mat.transpose() * &panel.yhat_mat;
    let g = if gram_is_pd(&gram) {
        let rhs = panel.yhat_mat.transpose() * &panel.b_mat;
        linalg::chol_solve(&gram, &rhs, "Yhat'Yhat")?.transpose()
    } else {
        // Thin SVD Ŷ = U D Vᵀ; G = Bᵀ U_r D_r⁻¹ V_rᵀ over singular values
        // above tolerance.
        let svd = panel.yhat_mat.clone().svd(true, true);
        let u = svd.u.as_ref().expect("svd with u requested");
        let v_t = svd.v_t.as_ref().expect("svd with v_t requested");
        let d_max = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
        if d_max <= 0.0 {
            return Err(ReconError::AllZeroForecasts);
        }
        let keep: Vec<usize> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > GRAM_PD_RATIO * d_max)
            .map(|(i, _)| i)
            .collect();
        if keep.is_empty() {
            return Err(ReconError::AllZeroForecasts);
        }
        let rows = panel.yhat_mat.nrows();
        let m = panel.yhat_mat.ncols();
        let mut u_r = DMatrix::zeros(rows, keep.len());
        let mut v_r_t = DMatrix::zeros(keep.len(), m);
        for (new_col, &old) in keep.iter().enumerate() {
            u_r.set_column(new_col, &u.column(old));
            let scale = 1.0 / svd.singular_values[old];
            for c in 0..m {
                v_r_t[(new_col, c)] = v_t[(old, c)] * scale;
            }
        }
        panel.b_mat.transpose() * u_r * v_r_t
    };
    require_finite(&g)?;
    Ok(ReconciliationMap {
        g,
        method: Method::Erm,
        is_projection: false,
        h: panel.h,
        cov_kind: None,
    })
}

/// In-sample unconstrained minimum-trace estimator:
/// G = BᵀŶ(ŶᵀŶ)⁻¹ over rows h..T of actuals paired with h-step fitted values.
pub fn g_emint_u(panel: &TrainingPanel) -> Result<ReconciliationMap> {
    if panel.alignment != Alignment::Insample {
        return Err(ReconError::MisalignedRows(
            "EMinT-U requires an insample-aligned panel".into(),
        ));
    }
    let gram = panel.yhat_mat.transpose() * &panel.yhat_mat;
    if !gram_is_pd(&gram) {
        return Err(ReconError::SingularGram(
            "Yhat'Yhat is numerically singular; supply more rows or use the ERM SVD path".into(),
        ));
    }
    let rhs = panel.yhat_mat.transpose() * &panel.b_mat;
    let g = linalg::chol_solve(&gram, &rhs, "Yhat'Yhat")?.transpose();
    require_finite(&g)?;
    Ok(ReconciliationMap {
        g,
        method: Method::EmintU,
        is_projection: false,
        h: panel.h,
        cov_kind: None,
    })
}

/// Applies a map row-wise: each output row is S·G·(base row).
pub fn apply(
    map: &ReconciliationMap,
    sm: &SummingMatrix,
    base: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if base.ncols() != sm.m || map.g.ncols() != sm.m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{} columns", sm.m),
            actual: format!("{}", base.ncols()),
        });
    }
    // base·Gᵀ·Sᵀ, i.e. rowwise S G ŷ.
    Ok(base * map.g.transpose() * sm.s.transpose())
}

/// Vector convenience wrapper over `apply`.
pub fn apply_vector(
    map: &ReconciliationMap,
    sm: &SummingMatrix,
    base: &nalgebra::DVector<f64>,
) -> Result<nalgebra::DVector<f64>> {
    let row = DMatrix::from_row_slice(1, base.len(), base.as_slice());
    let out = apply(map, sm, &row)?;
    Ok(nalgebra::DVector::from_column_slice(out.row(0).transpose().as_slice()))
}
