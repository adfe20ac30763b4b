//! File interchange: labeled CSV readers/writers for panels, covariance and
//! G matrices, fitted models, Monte Carlo results, and evaluation reports;
//! atomic writes; run manifests with a content hash.
//!
//! All numeric output uses the shortest round-trip decimal form, so files
//! written from identical inputs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::basemodels::ARModel;
use crate::error::{ReconError, Result};
use crate::evaluate::{level_groups, EvaluationReport, TheoremReport};
use crate::hierarchy::{HierarchySpec, ObservationPanel, SummingMatrix};
use crate::reconcile::ReconciliationMap;
use crate::simulate::McResult;

/// Writes a file atomically: the bytes land in a temporary file in the
/// destination directory, which is then renamed over the target, so a
/// failed write never leaves a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    std::io::Write::write_all(&mut tmp, contents)?;
    tmp.persist(path).map_err(|e| ReconError::Io(e.error))?;
    Ok(())
}

fn push_float(record: &mut Vec<String>, value: f64) {
    record.push(format!("{value}"));
}

fn csv_bytes(header: &[String], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer
        .into_inner()
        .map_err(|e| ReconError::ConfigError(format!("CSV buffer flush failed: {e}")))
}

/// Writes an aggregation structure as a `parent,child` edge list, one row
/// per membership, in constraint order.
pub fn write_hierarchy_csv(path: &Path, spec: &HierarchySpec) -> Result<()> {
    let header = vec!["parent".to_string(), "child".to_string()];
    let mut rows = Vec::new();
    for (parent, children) in &spec.edges {
        for child in children {
            rows.push(vec![parent.clone(), child.clone()]);
        }
    }
    atomic_write(path, &csv_bytes(&header, rows)?)
}

/// Reads a `parent,child` edge list back into a structure spec. Parents
/// keep first-appearance order and children keep row order; the bottom
/// level is every node that never appears as a parent, ordered by first
/// appearance. Duplicate edges are rejected (they would double-count a
/// series in the aggregate).
pub fn read_hierarchy_csv(path: &Path) -> Result<HierarchySpec> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["parent", "child"] {
        return Err(ReconError::ConfigError(format!(
            "hierarchy header mismatch: expected [\"parent\", \"child\"], got {header:?}"
        )));
    }
    let mut parents: Vec<String> = Vec::new();
    let mut children_of: Vec<Vec<String>> = Vec::new();
    let mut edge_seen = std::collections::HashSet::new();
    let mut child_order: Vec<String> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != 2 {
            return Err(ReconError::ConfigError(format!(
                "line {line}: expected 2 fields, got {}",
                record.len()
            )));
        }
        let parent = record[0].to_string();
        let child = record[1].to_string();
        if parent.is_empty() || child.is_empty() {
            return Err(ReconError::ConfigError(format!(
                "line {line}: empty parent or child label"
            )));
        }
        if !edge_seen.insert((parent.clone(), child.clone())) {
            return Err(ReconError::ConfigError(format!(
                "line {line}: duplicate edge {parent} -> {child}"
            )));
        }
        match parents.iter().position(|p| p == &parent) {
            Some(k) => children_of[k].push(child.clone()),
            None => {
                parents.push(parent.clone());
                children_of.push(vec![child.clone()]);
            }
        }
        if !child_order.contains(&child) {
            child_order.push(child);
        }
    }
    if parents.is_empty() {
        return Err(ReconError::EmptyInput("hierarchy edge list".into()));
    }
    let bottom_ids: Vec<String> = child_order
        .into_iter()
        .filter(|c| !parents.contains(c))
        .collect();
    let edges = parents.into_iter().zip(children_of).collect();
    Ok(HierarchySpec::new(edges, bottom_ids))
}

/// Writes an observation panel as CSV: a leading `t` column, then one
/// column per series in structure order.
pub fn write_panel_csv(path: &Path, panel: &ObservationPanel, sm: &SummingMatrix) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(sm.labels.iter().cloned());
    let mut rows = Vec::with_capacity(panel.len());
    for i in 0..panel.len() {
        let mut row = vec![format!("{}", panel.time_index[i])];
        for j in 0..sm.m {
            push_float(&mut row, panel.y[(i, j)]);
        }
        rows.push(row);
    }
    atomic_write(path, &csv_bytes(&header, rows)?)
}

/// Writes an arbitrary forecast table in panel layout with provenance
/// comment lines (`# key: value`) ahead of the header.
pub fn write_forecast_csv(
    path: &Path,
    data: &DMatrix<f64>,
    time_index: &[i64],
    sm: &SummingMatrix,
    provenance: &[(String, String)],
) -> Result<()> {
    if data.nrows() != time_index.len() || data.ncols() != sm.m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{}x{}", time_index.len(), sm.m),
            actual: format!("{}x{}", data.nrows(), data.ncols()),
        });
    }
    let mut header = vec!["t".to_string()];
    header.extend(sm.labels.iter().cloned());
    let mut rows = Vec::with_capacity(data.nrows());
    for i in 0..data.nrows() {
        let mut row = vec![format!("{}", time_index[i])];
        for j in 0..sm.m {
            push_float(&mut row, data[(i, j)]);
        }
        rows.push(row);
    }
    let mut out = Vec::new();
    for (key, value) in provenance {
        out.extend_from_slice(format!("# {key}: {value}\n").as_bytes());
    }
    out.extend_from_slice(&csv_bytes(&header, rows)?);
    atomic_write(path, &out)
}

fn parse_float(field: &str, line: usize, col: &str) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| {
        ReconError::ConfigError(format!("line {line}: column {col}: cannot parse '{field}'"))
    })?;
    if !value.is_finite() {
        return Err(ReconError::NonFiniteInput);
    }
    Ok(value)
}

/// Reads a panel CSV (leading `t` column, then the structure's labels in
/// order; `#` lines are comments) and validates coherence bookkeeping by
/// rebuilding the panel from its bottom columns.
pub fn read_panel_csv(path: &Path, sm: &SummingMatrix) -> Result<ObservationPanel> {
    let (time_index, y) = read_table_csv(path, sm)?;
    ObservationPanel::from_full(y, sm, time_index)
}

/// Reads a panel-layout CSV without imposing coherence: returns the time
/// index and the full T×m value matrix (base forecasts are incoherent).
pub fn read_table_csv(path: &Path, sm: &SummingMatrix) -> Result<(Vec<i64>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("t")
        .chain(sm.labels.iter().map(|s| s.as_str()))
        .collect();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(ReconError::ConfigError(format!(
            "panel header mismatch: expected {expected:?}, got {got:?}"
        )));
    }
    let mut time_index = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != sm.m + 1 {
            return Err(ReconError::ConfigError(format!(
                "line {line}: expected {} fields, got {}",
                sm.m + 1,
                record.len()
            )));
        }
        let t: i64 = record[0].trim().parse().map_err(|_| {
            ReconError::ConfigError(format!("line {line}: cannot parse t '{}'", &record[0]))
        })?;
        time_index.push(t);
        for j in 0..sm.m {
            values.push(parse_float(&record[j + 1], line, &sm.labels[j])?);
        }
    }
    if time_index.is_empty() {
        return Err(ReconError::EmptyPanel);
    }
    let y = DMatrix::from_row_slice(time_index.len(), sm.m, &values);
    Ok((time_index, y))
}

/// Writes a square labeled matrix (covariances): header row of labels,
/// each data row prefixed by its label.
pub fn write_matrix_csv(path: &Path, labels: &[String], mat: &DMatrix<f64>) -> Result<()> {
    if mat.nrows() != labels.len() || mat.ncols() != labels.len() {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{0}x{0}", labels.len()),
            actual: format!("{}x{}", mat.nrows(), mat.ncols()),
        });
    }
    let mut header = vec!["series".to_string()];
    header.extend(labels.iter().cloned());
    let mut rows = Vec::with_capacity(mat.nrows());
    for i in 0..mat.nrows() {
        let mut row = vec![labels[i].clone()];
        for j in 0..mat.ncols() {
            push_float(&mut row, mat[(i, j)]);
        }
        rows.push(row);
    }
    atomic_write(path, &csv_bytes(&header, rows)?)
}

/// Reads a square labeled matrix written by `write_matrix_csv`; the labels
/// must match the expected ones in order.
pub fn read_matrix_csv(path: &Path, labels: &[String]) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("series")
        .chain(labels.iter().map(|s| s.as_str()))
        .collect();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(ReconError::ConfigError(format!(
            "matrix header mismatch: expected {expected:?}, got {got:?}"
        )));
    }
    let k = labels.len();
    let mut values = Vec::with_capacity(k * k);
    let mut row_count = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != k + 1 {
            return Err(ReconError::ConfigError(format!(
                "line {line}: expected {} fields, got {}",
                k + 1,
                record.len()
            )));
        }
        if record[0].trim() != labels[i] {
            return Err(ReconError::ConfigError(format!(
                "line {line}: expected row label '{}', got '{}'",
                labels[i], &record[0]
            )));
        }
        for j in 0..k {
            values.push(parse_float(&record[j + 1], line, &labels[j])?);
        }
        row_count += 1;
    }
    if row_count != k {
        return Err(ReconError::ConfigError(format!(
            "matrix has {row_count} data rows, expected {k}"
        )));
    }
    Ok(DMatrix::from_row_slice(k, k, &values))
}

/// Writes a reconciliation map for audit: rows are bottom series, columns
/// are all series, with method provenance comments.
pub fn write_g_csv(path: &Path, map: &ReconciliationMap, sm: &SummingMatrix) -> Result<()> {
    let mut header = vec!["bottom".to_string()];
    header.extend(sm.labels.iter().cloned());
    let bottoms = sm.bottom_labels();
    let mut rows = Vec::with_capacity(sm.n);
    for (i, bottom) in bottoms.iter().enumerate() {
        let mut row = vec![bottom.clone()];
        for j in 0..sm.m {
            push_float(&mut row, map.g[(i, j)]);
        }
        rows.push(row);
    }
    let mut out = Vec::new();
    out.extend_from_slice(format!("# method: {}\n", map.method_label()).as_bytes());
    out.extend_from_slice(format!("# projection: {}\n", map.is_projection).as_bytes());
    out.extend_from_slice(&csv_bytes(&header, rows)?);
    atomic_write(path, &out)
}

/// Writes fitted model summaries: series_id, order, intercept, sigma2,
/// aicc, then the AR coefficients.
pub fn write_models_csv(path: &Path, models: &[ARModel]) -> Result<()> {
    let max_p = models.iter().map(|m| m.order_p).max().unwrap_or(0);
    let mut header = vec![
        "series_id".to_string(),
        "p".to_string(),
        "intercept".to_string(),
        "sigma2".to_string(),
        "aicc".to_string(),
    ];
    for i in 1..=max_p {
        header.push(format!("phi{i}"));
    }
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        let mut row = vec![m.series_id.clone(), format!("{}", m.order_p)];
        push_float(&mut row, m.intercept);
        push_float(&mut row, m.sigma2);
        push_float(&mut row, m.aicc);
        for i in 0..max_p {
            if i < m.coefficients.len() {
                push_float(&mut row, m.coefficients[i]);
            } else {
                row.push(String::new());
            }
        }
        rows.push(row);
    }
    atomic_write(path, &csv_bytes(&header, rows)?)
}

/// Writes Monte Carlo accumulations as tidy CSV with one row per
/// (cell, method, series, sample) combination.
pub fn write_mc_results_csv(path: &Path, result: &McResult) -> Result<()> {
    let header: Vec<String> = [
        "design_cell",
        "method",
        "series",
        "level",
        "sample",
        "sum_sq_err",
        "count",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let (names, groups) = level_groups(&result.levels);
    let mut level_name = vec![String::new(); result.levels.len()];
    for (name, members) in names.iter().zip(groups.iter()) {
        for &i in members {
            level_name[i] = name.clone();
        }
    }
    let mut rows = Vec::new();
    for cell in &result.cells {
        let cell_id = format!("{};t={};h={}", cell.label, cell.t, cell.h);
        let mut blocks: Vec<(&str, &crate::simulate::McAccum)> = vec![("base", &cell.base)];
        for (name, accum) in &cell.methods {
            blocks.push((name.as_str(), accum));
        }
        for (method, accum) in blocks {
            for (j, series) in result.series_labels.iter().enumerate() {
                rows.push(vec![
                    cell_id.clone(),
                    method.to_string(),
                    series.clone(),
                    level_name[j].clone(),
                    "insample".to_string(),
                    format!("{}", accum.insample_sse[j]),
                    format!("{}", accum.insample_rows),
                ]);
                rows.push(vec![
                    cell_id.clone(),
                    method.to_string(),
                    series.clone(),
                    level_name[j].clone(),
                    "outofsample".to_string(),
                    format!("{}", accum.out_sse[j]),
                    format!("{}", accum.out_rows),
                ]);
            }
        }
    }
    atomic_write(path, &csv_bytes(&header, rows)?)
}

/// Writes an evaluation report as tidy CSV: one row per (method, scope,
/// name) with MSE and percentage improvement columns.
pub fn write_report_csv(path: &Path, report: &EvaluationReport) -> Result<()> {
    let header: Vec<String> = ["sample", "method", "scope", "name", "mse", "pri_vs_reference"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    let sample = report.sample_kind.label().to_string();
    let mut push_block = |method: &str, scope: &str, name: &str, mse: f64, pri: Option<f64>| {
        rows.push(vec![
            sample.clone(),
            method.to_string(),
            scope.to_string(),
            name.to_string(),
            format!("{mse}"),
            pri.map(|p| format!("{p}")).unwrap_or_default(),
        ]);
    };
    for (j, label) in report.series_labels.iter().enumerate() {
        push_block(&report.reference_label, "series", label, report.reference_mse[j], None);
    }
    for (l, name) in report.level_names.iter().enumerate() {
        push_block(
            &report.reference_label,
            "level",
            name,
            report.reference_level_mse[l],
            None,
        );
    }
    push_block(
        &report.reference_label,
        "overall",
        "Overall",
        report.reference_overall_mse,
        None,
    );
    for (k, method) in report.methods.iter().enumerate() {
        for (j, label) in report.series_labels.iter().enumerate() {
            push_block(
                method,
                "series",
                label,
                report.per_series_mse[k][j],
                Some(report.pri_per_series[k][j]),
            );
        }
        for (l, name) in report.level_names.iter().enumerate() {
            push_block(
                method,
                "level",
                name,
                report.per_level_mse[k][l],
                Some(report.pri_per_level[k][l]),
            );
        }
        push_block(
            method,
            "overall",
            "Overall",
            report.overall_mse[k],
            Some(report.pri_overall[k]),
        );
    }
    atomic_write(path, &csv_bytes(&header, rows)?)
}

/// Renders the per-level improvement table in a fixed-width text layout:
/// one row per level plus Overall, one column per method.
pub fn render_report_text(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} percentage relative improvement in MSE vs {} (negative is better; levels are unweighted means over member series)",
        report.sample_kind.label(),
        report.reference_label
    );
    let _ = write!(out, "{:<10}", "level");
    for method in &report.methods {
        let _ = write!(out, "{method:>14}");
    }
    out.push('\n');
    for (l, name) in report.level_names.iter().enumerate() {
        let _ = write!(out, "{name:<10}");
        for k in 0..report.methods.len() {
            let _ = write!(out, "{:>14.2}", report.pri_per_level[k][l]);
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<10}", "Overall");
    for k in 0..report.methods.len() {
        let _ = write!(out, "{:>14.2}", report.pri_overall[k]);
    }
    out.push('\n');
    out
}

/// Renders theorem-check outcomes, one line per assertion, with margins.
pub fn render_theorem_reports_text(reports: &[TheoremReport]) -> String {
    let mut out = String::new();
    for report in reports {
        let status = if report.passed { "PASS" } else { "FAIL" };
        let seed = report
            .seed
            .map(|s| format!(" seed={s}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{status} {} (m={} n={} m*={}{seed})",
            report.check, report.m, report.n, report.m_star
        );
        for outcome in &report.outcomes {
            let mark = if outcome.passed { "ok  " } else { "FAIL" };
            let _ = writeln!(out, "  {mark} {:<34} margin={:e}", outcome.name, outcome.margin);
        }
    }
    out
}

/// 64-bit FNV-1a content hash, rendered as fixed-width hex.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// Reproducibility record for a command run. The timestamp line is
/// excluded from determinism comparisons.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub design_hash: String,
    pub timestamp_unix: u64,
}

impl Manifest {
    /// Builds a manifest from a canonical design description string.
    pub fn new(version: &str, seed: u64, design_description: &str) -> Self {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            version: version.to_string(),
            seed,
            design_hash: fnv1a_hex(design_description.as_bytes()),
            timestamp_unix,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "version = {}\nseed = {}\ndesign_hash = {}\ntimestamp_unix = {}\n",
            self.version, self.seed, self.design_hash, self.timestamp_unix
        )
    }
}

/// Writes the manifest next to a command's outputs.
pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    atomic_write(path, manifest.render().as_bytes())
}

/// Reads a file and strips manifest timestamp lines, for determinism
/// comparisons between reruns.
pub fn read_without_timestamp(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|line| !line.starts_with("timestamp"))
        .collect::<Vec<_>>()
        .join("\n"))
}
