//! Synthetic data generation: VAR(1) bottom-level processes with
//! eigenvalue-specified coefficient blocks, structured innovation
//! covariances, and the Monte Carlo harness that drives replications.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::basemodels::build_forecast_panel;
use crate::covariance::{diagonal_covariance, sample_covariance, shrink_covariance};
use crate::error::{ReconError, Result};
use crate::hierarchy::{build_summing_matrix, HierarchySpec, ObservationPanel, SummingMatrix};
use crate::linalg::{self, KahanSum};
use crate::reconcile::{
    apply, g_bottom_up, g_emint_u, g_mint, g_ols, g_wls, Alignment, ReconciliationMap,
    TrainingPanel,
};

/// A stationary VAR(1) data-generating process for the bottom level.
#[derive(Debug, Clone)]
pub struct Var1Config {
    /// n×n coefficient matrix; spectral radius must be < 1.
    pub coeff: DMatrix<f64>,
    /// n×n positive definite innovation covariance.
    pub innov_cov: DMatrix<f64>,
    /// Rows kept after burn-in.
    pub t_total: usize,
    /// Initial steps discarded so the chain forgets b₀ = 0.
    pub burn_in: usize,
    pub seed: u64,
}

/// 2×2 real matrix with eigenvalues modulus·e^{±i·angle}:
/// r·[[cosθ, −sinθ], [sinθ, cosθ]]. Its trace is 2r·cosθ and its
/// determinant r², so the eigenvalues are auditable from the entries.
pub fn rotation_coefficient(modulus: f64, angle: f64) -> Result<DMatrix<f64>> {
    if !(modulus > 0.0 && modulus < 1.0) {
        return Err(ReconError::ModulusOutOfRange(modulus));
    }
    let (s, c) = angle.sin_cos();
    Ok(DMatrix::from_row_slice(
        2,
        2,
        &[modulus * c, -modulus * s, modulus * s, modulus * c],
    ))
}

/// Largest correlation magnitude accepted by `small_design_cov`.
pub const SMALL_DESIGN_RHO_MAX: f64 = 0.8;

/// Innovation covariance of the four-series design: block-diag(Σ₁, Σ₁) with
/// Σ₁ = [[2, √6ρ], [√6ρ, 3]].
pub fn small_design_cov(rho: f64) -> Result<DMatrix<f64>> {
    if !(-SMALL_DESIGN_RHO_MAX..=SMALL_DESIGN_RHO_MAX).contains(&rho) {
        return Err(ReconError::RhoOutOfRange {
            rho,
            max: SMALL_DESIGN_RHO_MAX,
        });
    }
    let off = 6.0_f64.sqrt() * rho;
    let mut cov = DMatrix::zeros(4, 4);
    for b in 0..2 {
        let o = 2 * b;
        cov[(o, o)] = 2.0;
        cov[(o + 1, o + 1)] = 3.0;
        cov[(o, o + 1)] = off;
        cov[(o + 1, o)] = off;
    }
    Ok(cov)
}

/// Coefficient matrix of the four-series design: block-diag of the two
/// rotation blocks with eigenvalue moduli 0.6 and 0.9 and angles π/3, π/6.
pub fn small_design_coeff() -> DMatrix<f64> {
    let a1 = rotation_coefficient(0.6, std::f64::consts::FRAC_PI_3).expect("valid modulus");
    let a2 = rotation_coefficient(0.9, std::f64::consts::FRAC_PI_6).expect("valid modulus");
    block_diag(&[a1, a2])
}

/// Two-level structure over four bottom series:
/// Total → {A, B}, A → {AA, AB}, B → {BA, BB}.
pub fn small_design_hierarchy() -> HierarchySpec {
    HierarchySpec::new(
        vec![
            ("Total".into(), vec!["A".into(), "B".into()]),
            ("A".into(), vec!["AA".into(), "AB".into()]),
            ("B".into(), vec!["BA".into(), "BB".into()]),
        ],
        vec!["AA".into(), "AB".into(), "BA".into(), "BB".into()],
    )
}

/// 43-series structure: Total → 6 group aggregates → 6 bottom series each.
pub fn large_design_hierarchy() -> HierarchySpec {
    let mut edges = Vec::new();
    let mut groups = Vec::new();
    let mut bottoms = Vec::new();
    for g in 1..=6 {
        let name = format!("G{g}");
        let children: Vec<String> = (1..=6).map(|s| format!("G{g}S{s}")).collect();
        bottoms.extend(children.clone());
        edges.push((name.clone(), children));
        groups.push(name);
    }
    edges.insert(0, ("Total".into(), groups));
    HierarchySpec::new(edges, bottoms)
}

/// 36×36 coefficient matrix for the large design: alternating rotation
/// blocks reusing the two eigenvalue pairs of the small design.
pub fn large_design_coeff() -> DMatrix<f64> {
    let a1 = rotation_coefficient(0.6, std::f64::consts::FRAC_PI_3).expect("valid modulus");
    let a2 = rotation_coefficient(0.9, std::f64::consts::FRAC_PI_6).expect("valid modulus");
    let blocks: Vec<DMatrix<f64>> = (0..18)
        .map(|i| if i % 2 == 0 { a1.clone() } else { a2.clone() })
        .collect();
    block_diag(&blocks)
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((offset, offset), (b.nrows(), b.ncols())).copy_from(b);
        offset += b.nrows();
    }
    out
}

/// Correlation matrix with compound-symmetric diagonal blocks (each block's
/// ρ_b drawn uniformly from `within_range`) and small cross-block entries
/// produced by the unit-noise-vector scheme: entry (i, j) across blocks is
/// between_eps·⟨x_i, x_j⟩ for random unit vectors x. Positive definiteness
/// is validated after construction.
pub fn block_correlation<R: Rng>(
    n_blocks: usize,
    block_size: usize,
    within_range: (f64, f64),
    between_eps: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (lo, hi) = within_range;
    if !(0.0 <= lo && lo < hi && hi < 1.0) {
        return Err(ReconError::ConfigError(format!(
            "within-block correlation range ({lo}, {hi}) must satisfy 0 <= lo < hi < 1"
        )));
    }
    if !between_eps.is_finite() || between_eps < 0.0 {
        return Err(ReconError::ConfigError(format!(
            "between-block eps {between_eps} must be nonnegative"
        )));
    }
    let n = n_blocks * block_size;
    if n == 0 {
        return Err(ReconError::EmptyInput("correlation dimension 0".into()));
    }
    let mut corr = DMatrix::zeros(n, n);
    for b in 0..n_blocks {
        let rho = rng.random_range(lo..hi);
        let o = b * block_size;
        for i in 0..block_size {
            for j in 0..block_size {
                corr[(o + i, o + j)] = if i == j { 1.0 } else { rho };
            }
        }
    }
    if between_eps > 0.0 && n_blocks > 1 {
        // One unit vector per variable; the noise dimension n keeps typical
        // inner products small.
        let mut unit_vecs = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            v /= v.norm();
            unit_vecs.push(v);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if i / block_size != j / block_size {
                    let entry = between_eps * unit_vecs[i].dot(&unit_vecs[j]);
                    corr[(i, j)] = entry;
                    corr[(j, i)] = entry;
                }
            }
        }
    }
    if corr.clone().cholesky().is_none() {
        return Err(ReconError::NotPositiveDefinite(format!(
            "block correlation with eps {between_eps}; reduce the between-block noise"
        )));
    }
    Ok(corr)
}

/// Scales a correlation matrix into a covariance: Σ = D·corr·D with standard
/// deviations drawn uniformly from `sd_range`. When `negate_fraction` > 0 a
/// symmetric subset of off-diagonal entries is sign-flipped; if the result
/// loses positive definiteness the flip set is halved and retried.
pub fn cov_from_correlation<R: Rng>(
    corr: &DMatrix<f64>,
    sd_range: (f64, f64),
    negate_fraction: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = corr.nrows();
    let (lo, hi) = sd_range;
    if !(0.0 < lo && lo <= hi) {
        return Err(ReconError::ConfigError(format!(
            "sd range ({lo}, {hi}) must satisfy 0 < lo <= hi"
        )));
    }
    if !(0.0..=1.0).contains(&negate_fraction) {
        return Err(ReconError::ConfigError(format!(
            "negate fraction {negate_fraction} must lie in [0, 1]"
        )));
    }
    let sds = DVector::from_fn(n, |_, _| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    });
    let mut cov = corr.clone();
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] *= sds[i] * sds[j];
        }
    }
    if negate_fraction == 0.0 {
        return Ok(cov);
    }
    // All candidate flips are drawn up front so retries are deterministic.
    let mut flips = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < negate_fraction {
                flips.push((i, j));
            }
        }
    }
    let mut keep = flips.len();
    loop {
        let mut attempt = cov.clone();
        for &(i, j) in &flips[..keep] {
            attempt[(i, j)] = -attempt[(i, j)];
            attempt[(j, i)] = -attempt[(j, i)];
        }
        if attempt.clone().cholesky().is_some() {
            return Ok(attempt);
        }
        if keep == 0 {
            return Err(ReconError::NotPositiveDefinite(
                "sign-flipped covariance never regained positive definiteness".into(),
            ));
        }
        keep /= 2;
    }
}

/// Stationary covariance Γ of b_t = A b_{t−1} + ε: the unique solution of
/// Γ = AΓAᵀ + Σ, obtained from the Kronecker-vectorized linear system.
pub fn stationary_covariance(coeff: &DMatrix<f64>, innov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let radius = linalg::spectral_radius(coeff);
    if radius >= 1.0 {
        return Err(ReconError::UnstableCoefficient(radius));
    }
    let n = coeff.nrows();
    let sys = DMatrix::identity(n * n, n * n) - coeff.kronecker(coeff);
    let rhs = DVector::from_column_slice(innov.as_slice());
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| ReconError::SingularGram("Lyapunov system".into()))?;
    let mut gamma = DMatrix::from_column_slice(n, n, sol.as_slice());
    linalg::symmetrize(&mut gamma);
    Ok(gamma)
}

fn simulate_var1_with_rng<R: Rng>(
    coeff: &DMatrix<f64>,
    innov_cov: &DMatrix<f64>,
    t_total: usize,
    burn_in: usize,
    rng: &mut R,
    sm: &SummingMatrix,
) -> Result<ObservationPanel> {
    let n = coeff.nrows();
    if coeff.ncols() != n || innov_cov.nrows() != n || innov_cov.ncols() != n {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{n}x{n} coeff and innovation covariance"),
            actual: format!(
                "{}x{} and {}x{}",
                coeff.nrows(),
                coeff.ncols(),
                innov_cov.nrows(),
                innov_cov.ncols()
            ),
        });
    }
    if n != sm.n {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{} bottom series", sm.n),
            actual: format!("{n}"),
        });
    }
    let radius = linalg::spectral_radius(coeff);
    if radius >= 1.0 {
        return Err(ReconError::UnstableCoefficient(radius));
    }
    let chol = innov_cov
        .clone()
        .cholesky()
        .ok_or_else(|| ReconError::NotPositiveDefinite("innovation covariance".into()))?;
    let l = chol.l();
    let mut state = DVector::zeros(n);
    let mut b = DMatrix::zeros(t_total, n);
    for step in 0..(burn_in + t_total) {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        state = coeff * &state + &l * z;
        if step >= burn_in {
            b.row_mut(step - burn_in).copy_from(&state.transpose());
        }
    }
    ObservationPanel::from_bottom(b, sm, 0)
}

/// Simulates one coherent panel from the seeded generator in the config.
pub fn simulate_var1(cfg: &Var1Config, sm: &SummingMatrix) -> Result<ObservationPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    simulate_var1_with_rng(
        &cfg.coeff,
        &cfg.innov_cov,
        cfg.t_total,
        cfg.burn_in,
        &mut rng,
        sm,
    )
}

/// A random symmetric positive definite matrix: AᵀA/dim + jitter·I.
pub fn random_spd<R: Rng>(rng: &mut R, dim: usize, jitter: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut w = a.transpose() * &a / dim as f64 + DMatrix::identity(dim, dim) * jitter;
    linalg::symmetrize(&mut w);
    w
}

/// A matrix of independent standard normal entries.
pub fn random_normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Sign pattern applied to the large design's innovation covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMode {
    /// Keep the generated nonnegative correlations.
    Nonnegative,
    /// Flip a fraction of off-diagonal covariances to negative.
    Mixed,
}

impl CorrelationMode {
    pub fn label(&self) -> &'static str {
        match self {
            CorrelationMode::Nonnegative => "nonnegative",
            CorrelationMode::Mixed => "mixed",
        }
    }
}

/// How a design cell obtains its innovation covariance.
#[derive(Debug, Clone)]
pub enum DesignVariant {
    /// Four-series design: one cell per correlation value in the grid.
    Small { rho_grid: Vec<f64> },
    /// 43-series design: a fresh block correlation per replication.
    Large {
        mode: CorrelationMode,
        between_eps: f64,
        negate_fraction: f64,
    },
    /// A caller-supplied covariance (used for degenerate checks).
    Fixed {
        innov_cov: DMatrix<f64>,
        label: String,
    },
}

/// A full Monte Carlo experiment description.
#[derive(Debug, Clone)]
pub struct McDesign {
    pub hierarchy: HierarchySpec,
    pub coeff: DMatrix<f64>,
    pub burn_in: usize,
    pub variant: DesignVariant,
    pub replications: usize,
    pub horizons: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub max_p: usize,
    pub seed: u64,
}

impl McDesign {
    /// The four-series design over a correlation grid.
    pub fn small(
        replications: usize,
        sample_sizes: Vec<usize>,
        rho_grid: Vec<f64>,
        seed: u64,
        max_p: usize,
    ) -> Result<Self> {
        for &rho in &rho_grid {
            small_design_cov(rho)?;
        }
        let design = Self {
            hierarchy: small_design_hierarchy(),
            coeff: small_design_coeff(),
            burn_in: 100,
            variant: DesignVariant::Small { rho_grid },
            replications,
            horizons: vec![1],
            sample_sizes,
            max_p,
            seed,
        };
        design.validate()?;
        Ok(design)
    }

    /// The 43-series design with block-correlated innovations.
    pub fn large(
        replications: usize,
        sample_sizes: Vec<usize>,
        mode: CorrelationMode,
        seed: u64,
        max_p: usize,
    ) -> Result<Self> {
        let negate_fraction = match mode {
            CorrelationMode::Nonnegative => 0.0,
            CorrelationMode::Mixed => 0.3,
        };
        let design = Self {
            hierarchy: large_design_hierarchy(),
            coeff: large_design_coeff(),
            burn_in: 100,
            variant: DesignVariant::Large {
                mode,
                between_eps: 0.1,
                negate_fraction,
            },
            replications,
            horizons: vec![1],
            sample_sizes,
            max_p,
            seed,
        };
        design.validate()?;
        Ok(design)
    }

    /// A custom single-cell design with a fixed innovation covariance.
    #[allow(clippy::too_many_arguments)]
    pub fn fixed(
        hierarchy: HierarchySpec,
        coeff: DMatrix<f64>,
        innov_cov: DMatrix<f64>,
        label: impl Into<String>,
        replications: usize,
        sample_sizes: Vec<usize>,
        seed: u64,
        max_p: usize,
    ) -> Result<Self> {
        let design = Self {
            hierarchy,
            coeff,
            burn_in: 100,
            variant: DesignVariant::Fixed {
                innov_cov,
                label: label.into(),
            },
            replications,
            horizons: vec![1],
            sample_sizes,
            max_p,
            seed,
        };
        design.validate()?;
        Ok(design)
    }

    /// Re-checks the design invariants; call after mutating public fields
    /// (the constructors validate on your behalf).
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(ReconError::ConfigError(
                "replications must be at least 1".into(),
            ));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(ReconError::ConfigError(
                "horizons must be nonempty and positive".into(),
            ));
        }
        let h_max = *self.horizons.iter().max().expect("nonempty");
        for &t in &self.sample_sizes {
            // Hold out h observations and still leave room to fit.
            if t < self.max_p + 10 + h_max {
                return Err(ReconError::ConfigError(format!(
                    "sample size {t} too small for max_p {} and horizon {h_max}",
                    self.max_p
                )));
            }
        }
        Ok(())
    }
}

/// Method labels accumulated by the harness, in output order.
pub const MC_METHODS: [&str; 6] = [
    "bu",
    "ols",
    "wls",
    "mint_sample",
    "mint_shrink",
    "emint_u",
];

/// Accumulated squared errors for one method within a cell.
#[derive(Debug, Clone)]
pub struct McAccum {
    /// Per-series in-sample sums of squared errors.
    pub insample_sse: Vec<f64>,
    /// Total in-sample rows accumulated across replications.
    pub insample_rows: usize,
    /// Per-series out-of-sample sums of squared errors.
    pub out_sse: Vec<f64>,
    /// Total out-of-sample rows accumulated.
    pub out_rows: usize,
    /// Replications where this method's map could not be built or applied.
    /// Shared-stage failures are counted on the cell, not here.
    pub skipped: usize,
}

/// One design cell: a (covariance setting, sample size, horizon) triple.
#[derive(Debug, Clone)]
pub struct McCell {
    pub label: String,
    pub t: usize,
    pub h: usize,
    pub replications_done: usize,
    /// Replications lost before any method ran (simulation or base-model failure).
    pub skipped: usize,
    /// First few failure descriptions, covering both whole-replication and
    /// per-method skips.
    pub skip_reasons: Vec<String>,
    /// Unreconciled base forecasts, the improvement reference.
    pub base: McAccum,
    /// Per-method accumulations in `MC_METHODS` order.
    pub methods: Vec<(String, McAccum)>,
}

/// All cells of a design plus the series metadata shared by them.
#[derive(Debug, Clone)]
pub struct McResult {
    pub cells: Vec<McCell>,
    pub series_labels: Vec<String>,
    pub levels: Vec<usize>,
}

enum CovSource<'a> {
    Fixed(&'a DMatrix<f64>),
    Generated {
        n_blocks: usize,
        block_size: usize,
        within: (f64, f64),
        between_eps: f64,
        sd_range: (f64, f64),
        negate_fraction: f64,
    },
}

/// Per-method result inside one replication: squared errors on success,
/// a failure description otherwise.
type MethodOutcome = std::result::Result<(Vec<f64>, Vec<f64>), String>;

struct RepOutcome {
    insample_rows: usize,
    base_in: Vec<f64>,
    base_out: Vec<f64>,
    /// (label, outcome), in MC_METHODS order.
    methods: Vec<(String, MethodOutcome)>,
}

fn column_sse(errors: &DMatrix<f64>) -> Vec<f64> {
    (0..errors.ncols())
        .map(|j| errors.column(j).iter().map(|e| e * e).sum())
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_replication(
    sm: &SummingMatrix,
    coeff: &DMatrix<f64>,
    burn_in: usize,
    t_total: usize,
    h: usize,
    max_p: usize,
    seed: u64,
    cov_source: &CovSource<'_>,
) -> Result<RepOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innov = match cov_source {
        CovSource::Fixed(m) => (*m).clone(),
        CovSource::Generated {
            n_blocks,
            block_size,
            within,
            between_eps,
            sd_range,
            negate_fraction,
        } => {
            let corr = block_correlation(*n_blocks, *block_size, *within, *between_eps, &mut rng)?;
            cov_from_correlation(&corr, *sd_range, *negate_fraction, &mut rng)?
        }
    };
    let panel = simulate_var1_with_rng(coeff, &innov, t_total, burn_in, &mut rng, sm)?;

    // Withhold the last h observations; forecast their end point.
    let t_train = t_total - h;
    let y_train = panel.y.rows(0, t_train).into_owned();
    let fp = build_forecast_panel(&y_train, &sm.labels, h, max_p)?;

    let actual_in = y_train.rows(fp.fitted_start, t_train - fp.fitted_start);
    let actual_out = panel.y.rows(t_total - 1, 1).into_owned();

    let base_in = column_sse(&(actual_in - &fp.fitted));
    let base_out = column_sse(&(&actual_out - &fp.base));

    // A failure here is specific to one method (for example a singular
    // Gram matrix for the unrestricted trace minimizer when fitted values
    // are collinear); the other methods still accumulate this replication.
    let b_train = panel.b.rows(0, t_train);
    let build_map = |label: &str| -> Result<ReconciliationMap> {
        match label {
            "bu" => g_bottom_up(sm),
            "ols" => g_ols(sm),
            "wls" => g_wls(sm, &diagonal_covariance(&fp.residuals)?),
            "mint_sample" => g_mint(sm, &sample_covariance(&fp.residuals)?),
            "mint_shrink" => g_mint(sm, &shrink_covariance(&fp.residuals)?),
            "emint_u" => {
                let emint_panel = TrainingPanel::new(
                    Alignment::Insample,
                    b_train.rows(fp.fitted_start, t_train - fp.fitted_start).into_owned(),
                    fp.fitted.clone(),
                    sm,
                    h,
                    None,
                )?;
                g_emint_u(&emint_panel)
            }
            other => Err(ReconError::ConfigError(format!("unknown method {other}"))),
        }
    };

    let mut methods = Vec::with_capacity(MC_METHODS.len());
    for label in MC_METHODS {
        let outcome = build_map(label)
            .and_then(|map| {
                let recon_in = apply(&map, sm, &fp.fitted)?;
                let sse_in = column_sse(&(actual_in - recon_in));
                let recon_out = apply(&map, sm, &fp.base)?;
                let sse_out = column_sse(&(&actual_out - recon_out));
                Ok((sse_in, sse_out))
            })
            .map_err(|err| err.to_string());
        methods.push((label.to_string(), outcome));
    }

    Ok(RepOutcome {
        insample_rows: t_train - fp.fitted_start,
        base_in,
        base_out,
        methods,
    })
}

/// Runs every replication of every design cell. Replications execute in
/// parallel but are merged in replication order with compensated summation,
/// so the result is identical regardless of thread count. Replication r of
/// a cell uses the derived seed `design.seed XOR r`. Failures are counted
/// and reported, never fatal: a simulation or base-model failure skips the
/// whole replication (cell-level count), while a single method's failure
/// skips only that method's accumulation (per-method count).
pub fn run_monte_carlo(design: &McDesign) -> Result<McResult> {
    let sm = build_summing_matrix(&design.hierarchy)?;
    let m = sm.m;

    // (label, sample size, horizon, covariance source) per cell.
    let mut cell_specs: Vec<(String, usize, usize, CovSource<'_>)> = Vec::new();
    let small_covs: Vec<(f64, DMatrix<f64>)> = match &design.variant {
        DesignVariant::Small { rho_grid } => rho_grid
            .iter()
            .map(|&rho| small_design_cov(rho).map(|c| (rho, c)))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    for &h in &design.horizons {
        for &t in &design.sample_sizes {
            match &design.variant {
                DesignVariant::Small { .. } => {
                    for (rho, cov) in &small_covs {
                        cell_specs.push((format!("rho={rho}"), t, h, CovSource::Fixed(cov)));
                    }
                }
                DesignVariant::Large {
                    mode,
                    between_eps,
                    negate_fraction,
                } => {
                    cell_specs.push((
                        mode.label().to_string(),
                        t,
                        h,
                        CovSource::Generated {
                            n_blocks: 6,
                            block_size: 6,
                            within: (0.2, 0.7),
                            between_eps: *between_eps,
                            sd_range: (2.0_f64.sqrt(), 6.0_f64.sqrt()),
                            negate_fraction: *negate_fraction,
                        },
                    ));
                }
                DesignVariant::Fixed { innov_cov, label } => {
                    cell_specs.push((label.clone(), t, h, CovSource::Fixed(innov_cov)));
                }
            }
        }
    }

    let mut cells = Vec::with_capacity(cell_specs.len());
    for (label, t, h, cov_source) in &cell_specs {
        let outcomes: Vec<Result<RepOutcome>> = (0..design.replications)
            .into_par_iter()
            .map(|r| {
                run_replication(
                    &sm,
                    &design.coeff,
                    design.burn_in,
                    *t,
                    *h,
                    design.max_p,
                    design.seed ^ r as u64,
                    cov_source,
                )
            })
            .collect();

        let mut base_in: Vec<KahanSum> = vec![KahanSum::new(); m];
        let mut base_out: Vec<KahanSum> = vec![KahanSum::new(); m];
        let mut method_in: Vec<Vec<KahanSum>> = vec![vec![KahanSum::new(); m]; MC_METHODS.len()];
        let mut method_out: Vec<Vec<KahanSum>> = vec![vec![KahanSum::new(); m]; MC_METHODS.len()];
        let mut method_rows_in = vec![0usize; MC_METHODS.len()];
        let mut method_rows_out = vec![0usize; MC_METHODS.len()];
        let mut method_skipped = vec![0usize; MC_METHODS.len()];
        let mut insample_rows = 0usize;
        let mut out_rows = 0usize;
        let mut done = 0usize;
        let mut skipped = 0usize;
        let mut skip_reasons = Vec::new();

        for (r, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(rep) => {
                    done += 1;
                    insample_rows += rep.insample_rows;
                    out_rows += 1;
                    for j in 0..m {
                        base_in[j].add(rep.base_in[j]);
                        base_out[j].add(rep.base_out[j]);
                    }
                    for (k, (label, method)) in rep.methods.iter().enumerate() {
                        match method {
                            Ok((sse_in, sse_out)) => {
                                for j in 0..m {
                                    method_in[k][j].add(sse_in[j]);
                                    method_out[k][j].add(sse_out[j]);
                                }
                                method_rows_in[k] += rep.insample_rows;
                                method_rows_out[k] += 1;
                            }
                            Err(reason) => {
                                method_skipped[k] += 1;
                                if skip_reasons.len() < 10 {
                                    skip_reasons.push(format!(
                                        "replication {r}, {label}: {reason}"
                                    ));
                                }
                            }
                        }
                    }
                }
                Err(err) => {
                    skipped += 1;
                    if skip_reasons.len() < 10 {
                        skip_reasons.push(format!("replication {r}: {err}"));
                    }
                }
            }
        }

        let mut methods = Vec::with_capacity(MC_METHODS.len());
        for (k, name) in MC_METHODS.iter().enumerate() {
            methods.push((
                name.to_string(),
                McAccum {
                    insample_sse: method_in[k].iter().map(|s| s.value()).collect(),
                    insample_rows: method_rows_in[k],
                    out_sse: method_out[k].iter().map(|s| s.value()).collect(),
                    out_rows: method_rows_out[k],
                    skipped: method_skipped[k],
                },
            ));
        }
        let base = McAccum {
            insample_sse: base_in.iter().map(|k| k.value()).collect(),
            insample_rows,
            out_sse: base_out.iter().map(|k| k.value()).collect(),
            out_rows,
            skipped: 0,
        };

        cells.push(McCell {
            label: label.clone(),
            t: *t,
            h: *h,
            replications_done: done,
            skipped,
            skip_reasons,
            base,
            methods,
        });
    }

    Ok(McResult {
        cells,
        series_labels: sm.labels.clone(),
        levels: sm.levels.clone(),
    })
}
