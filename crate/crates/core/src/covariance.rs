//! Covariance estimators that parameterize the reconciliation maps: sample,
//! shrinkage-to-diagonal, diagonal, scaled identity, plus a symmetric
//! pseudo-inverse.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{ReconError, Result};
use crate::linalg;

/// Provenance of a covariance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovKind {
    IdentityScaled,
    Diagonal,
    Sample,
    Shrink,
    UserSupplied,
}

impl fmt::Display for CovKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CovKind::IdentityScaled => "identity_scaled",
            CovKind::Diagonal => "diagonal",
            CovKind::Sample => "sample",
            CovKind::Shrink => "shrink",
            CovKind::UserSupplied => "user_supplied",
        };
        f.write_str(name)
    }
}

/// A symmetric covariance matrix with provenance and target horizon.
///
/// Symmetry to 1e-12 and a strictly positive diagonal hold for every
/// constructed value; violating inputs are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub w: DMatrix<f64>,
    pub kind: CovKind,
    /// Shrinkage intensity in [0,1]; present iff kind = Shrink.
    pub shrink_lambda: Option<f64>,
    /// Forecast horizon the estimate targets. Estimators here produce h = 1;
    /// maps built from W are invariant to the positive scale k_h, so one
    /// estimate serves every horizon under proportional scaling.
    pub h: usize,
}

impl CovarianceEstimate {
    /// Wraps an externally supplied matrix, enforcing the type invariants.
    pub fn user_supplied(mut w: DMatrix<f64>, h: usize) -> Result<Self> {
        // NaN satisfies no comparison, so the symmetry check alone would
        // let non-finite entries through.
        if w.iter().any(|v| !v.is_finite()) {
            return Err(ReconError::NonFiniteInput);
        }
        linalg::require_symmetric(&w, 1e-12)?;
        linalg::symmetrize(&mut w);
        check_positive_diagonal(&w, &[])?;
        Ok(Self {
            w,
            kind: CovKind::UserSupplied,
            shrink_lambda: None,
            h,
        })
    }

    /// k·I_m, the covariance behind the OLS map.
    pub fn identity_scaled(m: usize, k: f64) -> Result<Self> {
        if !k.is_finite() || k <= 0.0 {
            return Err(ReconError::DegenerateVariance(format!(
                "identity scale {k} is not a finite positive value"
            )));
        }
        Ok(Self {
            w: DMatrix::identity(m, m) * k,
            kind: CovKind::IdentityScaled,
            shrink_lambda: None,
            h: 1,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

fn check_finite(residuals: &DMatrix<f64>) -> Result<()> {
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(ReconError::NonFiniteInput);
    }
    Ok(())
}

fn check_positive_diagonal(w: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    for i in 0..w.nrows() {
        let d = w[(i, i)];
        if !d.is_finite() || d <= 0.0 {
            let name = labels
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("column {i}"));
            return Err(ReconError::DegenerateVariance(name));
        }
    }
    Ok(())
}

/// Column-centered copy of the residual rows.
fn centered(residuals: &DMatrix<f64>) -> DMatrix<f64> {
    let t = residuals.nrows();
    let mut out = residuals.clone();
    for j in 0..residuals.ncols() {
        let mean: f64 = residuals.column(j).iter().sum::<f64>() / t as f64;
        for i in 0..t {
            out[(i, j)] -= mean;
        }
    }
    out
}

fn sample_matrix(residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = residuals.nrows();
    if t < 2 {
        return Err(ReconError::TooFewRows {
            required: 2,
            actual: t,
        });
    }
    check_finite(residuals)?;
    let c = centered(residuals);
    let mut w = c.transpose() * &c / (t as f64 - 1.0);
    linalg::symmetrize(&mut w);
    Ok(w)
}

/// Unbiased sample covariance of the residual rows (column means removed).
pub fn sample_covariance(residuals: &DMatrix<f64>) -> Result<CovarianceEstimate> {
    let w = sample_matrix(residuals)?;
    check_positive_diagonal(&w, &[])?;
    Ok(CovarianceEstimate {
        w,
        kind: CovKind::Sample,
        shrink_lambda: None,
        h: 1,
    })
}

/// Shrinkage toward the diagonal of the sample covariance, with the
/// variance-of-correlations intensity: λ = Σ var̂(r_ij) / Σ r_ij² over i≠j,
/// clamped to [0,1]. Off-diagonals scale by (1−λ); the diagonal is kept
/// bit-for-bit equal to the sample diagonal.
pub fn shrink_covariance(residuals: &DMatrix<f64>) -> Result<CovarianceEstimate> {
    shrink_covariance_with(residuals, None)
}

/// Same as `shrink_covariance` but with an explicit intensity override.
pub fn shrink_covariance_with(
    residuals: &DMatrix<f64>,
    lambda_override: Option<f64>,
) -> Result<CovarianceEstimate> {
    let t = residuals.nrows();
    if t < 3 {
        return Err(ReconError::TooFewRows {
            required: 3,
            actual: t,
        });
    }
    let sample = sample_matrix(residuals)?;
    check_positive_diagonal(&sample, &[])?;
    let lambda = match lambda_override {
        Some(l) => l.clamp(0.0, 1.0),
        None => estimate_lambda(residuals, &sample),
    };
    let mut w = sample;
    let m = w.nrows();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                w[(i, j)] *= 1.0 - lambda;
            }
        }
    }
    Ok(CovarianceEstimate {
        w,
        kind: CovKind::Shrink,
        shrink_lambda: Some(lambda),
        h: 1,
    })
}

/// Variance-of-correlations intensity on standardized residuals.
fn estimate_lambda(residuals: &DMatrix<f64>, sample: &DMatrix<f64>) -> f64 {
    let t = residuals.nrows() as f64;
    let m = residuals.ncols();
    if m < 2 {
        return 1.0;
    }
    // Standardize columns so products x_ti·x_tj estimate correlations.
    let mut x = centered(residuals);
    for j in 0..m {
        let sd = sample[(j, j)].sqrt();
        for i in 0..x.nrows() {
            x[(i, j)] /= sd;
        }
    }
    let mut var_sum = 0.0;
    let mut r2_sum = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let mut wbar = 0.0;
            for row in 0..x.nrows() {
                wbar += x[(row, i)] * x[(row, j)];
            }
            wbar /= t;
            let r = wbar * t / (t - 1.0);
            let mut var_w = 0.0;
            for row in 0..x.nrows() {
                let d = x[(row, i)] * x[(row, j)] - wbar;
                var_w += d * d;
            }
            let var_r = var_w * t / (t - 1.0).powi(3);
            var_sum += var_r;
            r2_sum += r * r;
        }
    }
    if r2_sum <= 0.0 {
        return 1.0;
    }
    (var_sum / r2_sum).clamp(0.0, 1.0)
}

/// Diagonal matrix of per-column sample variances (the WLS weights).
pub fn diagonal_covariance(residuals: &DMatrix<f64>) -> Result<CovarianceEstimate> {
    let sample = sample_matrix(residuals)?;
    check_positive_diagonal(&sample, &[])?;
    let m = sample.nrows();
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        w[(i, i)] = sample[(i, i)];
    }
    Ok(CovarianceEstimate {
        w,
        kind: CovKind::Diagonal,
        shrink_lambda: None,
        h: 1,
    })
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix via eigendecomposition:
/// eigenvalues with magnitude above rank_tol · max|eigenvalue| are inverted,
/// the rest are zeroed.
pub fn pseudo_inverse(mat: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    linalg::require_symmetric(mat, 1e-8)?;
    let mut sym = mat.clone();
    linalg::symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let threshold = rank_tol * max_ev;
    let mut inv_vals = eig.eigenvalues.clone();
    for v in inv_vals.iter_mut() {
        *v = if v.abs() > threshold { 1.0 / *v } else { 0.0 };
    }
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    linalg::symmetrize(&mut out);
    Ok(out)
}

/// Default relative eigenvalue cutoff for `pseudo_inverse`.
pub const RANK_TOL_DEFAULT: f64 = 1e-10;
