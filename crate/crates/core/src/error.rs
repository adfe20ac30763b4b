//! Error types shared across the library.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, ReconError>;

/// Errors raised by hierarchy construction, covariance estimation,
/// reconciliation, model fitting, simulation and evaluation.
#[derive(Debug, Error)]
pub enum ReconError {
    #[error("aggregation graph has a cycle through node `{0}`")]
    CycleDetected(String),

    #[error("node `{0}` is declared more than once")]
    DuplicateNode(String),

    #[error("hierarchy has no bottom-level series")]
    EmptyBottomLevel,

    #[error("summing matrix is not in aggregates-first order: bottom block is not the identity")]
    OrderingViolated,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("too few rows: need at least {required}, got {actual}")]
    TooFewRows { required: usize, actual: usize },

    #[error("input contains non-finite values")]
    NonFiniteInput,

    #[error("column `{0}` has zero (or non-positive) sample variance")]
    DegenerateVariance(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NonSymmetric(f64),

    #[error("covariance estimate must be diagonal for WLS")]
    NotDiagonal,

    #[error("Gram matrix is singular or numerically rank deficient: {0}")]
    SingularGram(String),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("reduced Gram matrix S'Sigma^+S is rank deficient; the null space of Sigma intersects col(S)")]
    RankDeficientReducedGram,

    #[error("training panel has no rows")]
    EmptyPanel,

    #[error("all base forecasts are numerically zero; no singular values above tolerance")]
    AllZeroForecasts,

    #[error("training panel rows are misaligned: {0}")]
    MisalignedRows(String),

    #[error("series too short: need at least {required} observations, got {actual}")]
    SeriesTooShort { required: usize, actual: usize },

    #[error("history too short: need at least {required} observations, got {actual}")]
    HistoryTooShort { required: usize, actual: usize },

    #[error("modulus must lie strictly inside (0, 1), got {0}")]
    ModulusOutOfRange(f64),

    #[error("correlation out of range: |rho| must be <= {max}, got {rho}")]
    RhoOutOfRange { rho: f64, max: f64 },

    #[error("VAR coefficient matrix is unstable: spectral radius {0} >= 1")]
    UnstableCoefficient(f64),

    #[error("reference MSE is zero for series `{0}`; relative improvement undefined")]
    ZeroReference(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("missing input for method `{method}`: provide {flag}")]
    MissingInput { method: String, flag: String },

    #[error("reconciled output violates coherence (max |U'y| = {0:.3e}); this is an internal error")]
    IncoherentOutput(f64),

    #[error("projection map violates GS = I (max deviation {0:.3e}); this is an internal error")]
    ProjectionViolated(f64),

    #[error("the two minimum-trace closed forms disagree (max deviation {0:.3e}); this is an internal error")]
    DualFormMismatch(f64),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
