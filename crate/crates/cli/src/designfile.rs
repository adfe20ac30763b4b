//! TOML design files: the flag-equivalent way to describe a Monte Carlo
//! design, so long runs are reproducible from a checked-in config.

use std::path::Path;

use serde::Deserialize;

use recon_core::error::{ReconError, Result};

/// Keys mirror the `simulate` flags one-to-one. Unknown keys are rejected
/// so a typo cannot silently change a run.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    /// "small" or "large".
    pub design: String,
    pub replications: usize,
    /// Sample sizes.
    pub t: Vec<usize>,
    /// Innovation correlations (small design only).
    pub rho: Option<Vec<f64>>,
    /// "nonnegative" or "mixed" (large design only).
    pub correlation_mode: Option<String>,
    pub seed: u64,
    pub max_p: Option<usize>,
    /// Forecast horizons; defaults to [1].
    pub h: Option<Vec<usize>>,
}

pub fn read_design_file(path: &Path) -> Result<DesignFile> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| ReconError::ConfigError(format!("{}: {e}", path.display())))
}
