//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{ReconError, Result};

/// Maximum absolute entry of a matrix. Zero for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Maximum absolute asymmetry `max |M - M'|`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Checks symmetry within `tol` (absolute), returning `NonSymmetric` otherwise.
pub fn require_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(ReconError::DimensionMismatch {
            expected: "square matrix".into(),
            actual: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    let asym = max_asymmetry(m);
    if asym > tol {
        return Err(ReconError::NonSymmetric(asym));
    }
    Ok(())
}

/// Replaces a nearly-symmetric matrix by its symmetric part `(M + M')/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Solves `A X = B` for symmetric positive definite `A` via Cholesky.
pub fn chol_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| ReconError::NotPositiveDefinite(what.to_string()))?;
    Ok(chol.solve(b))
}

/// Least-squares solution of `A x = b` (rows >= cols, full column rank)
/// through the thin QR factorization: solve `R x = Q' b`.
pub fn lstsq_qr(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let ncols = a.ncols();
    if a.nrows() < ncols {
        return Err(ReconError::TooFewRows {
            required: ncols,
            actual: a.nrows(),
        });
    }
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    // Reject numerically rank-deficient systems instead of dividing by ~0.
    let rmax = (0..ncols).fold(0.0_f64, |m, i| m.max(r[(i, i)].abs()));
    for i in 0..ncols {
        if r[(i, i)].abs() <= 1e-12 * rmax.max(1e-300) {
            return Err(ReconError::SingularGram(format!(
                "QR diagonal {} of {} is numerically zero",
                i, ncols
            )));
        }
    }
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| ReconError::SingularGram("upper-triangular solve failed".into()))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Spectral radius (max |eigenvalue|) of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Largest singular value of a matrix.
pub fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, s| acc.max(*s))
}

/// Neumaier compensated summation; keeps long accumulations from drifting.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
