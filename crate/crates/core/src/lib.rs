//! Coherent point-forecast reconciliation for hierarchical and grouped
//! time series: summing-matrix construction, covariance estimation, the
//! BU/OLS/WLS/GLS/MinT/ERM family of reconciliation maps, AR base models,
//! a seeded VAR(1) Monte Carlo harness, and numerical verification of the
//! equivalence and dominance guarantees the maps satisfy.

pub mod basemodels;
pub mod covariance;
pub mod error;
pub mod evaluate;
pub mod hierarchy;
pub mod io;
pub mod linalg;
pub mod reconcile;
pub mod simulate;

pub use error::{ReconError, Result};
pub use hierarchy::{
    build_summing_matrix, derive_null_space, validate_coherence, HierarchySpec, ObservationPanel,
    SummingMatrix,
};
pub use reconcile::{
    apply, apply_vector, g_bottom_up, g_emint_u, g_erm, g_gls, g_mint, g_ols, g_wls, Alignment,
    Method, ReconciliationMap, TrainingPanel,
};
