//! Aggregation structure: summing matrix S, bottom selector J, aggregation
//! block C, and null-space operator U.
//!
//! Row ordering is aggregates-first, bottom-last, so the blocks
//! S = [Cᵀ | I_n]ᵀ, J = [0 | I_n], Uᵀ = [I_{m*} | −C] hold by construction
//! and J S = I_n, Uᵀ S = 0 are exact in integer arithmetic.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;

use crate::error::{ReconError, Result};

/// Aggregation constraints: which nodes exist, how they sum, which are leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchySpec {
    /// All node labels, parents and leaves alike.
    pub node_ids: Vec<String>,
    /// One entry per aggregation constraint: parent and its children, in
    /// declaration order. Grouped structures list every constraint row
    /// explicitly; nothing is inferred.
    pub edges: Vec<(String, Vec<String>)>,
    /// Leaf labels in the order their series appear in the bottom block.
    pub bottom_ids: Vec<String>,
}

impl HierarchySpec {
    /// Builds a spec from constraint rows and an explicit bottom ordering.
    pub fn new(edges: Vec<(String, Vec<String>)>, bottom_ids: Vec<String>) -> Self {
        let mut node_ids = Vec::new();
        let mut seen = HashSet::new();
        for (parent, children) in &edges {
            if seen.insert(parent.clone()) {
                node_ids.push(parent.clone());
            }
            for child in children {
                if seen.insert(child.clone()) {
                    node_ids.push(child.clone());
                }
            }
        }
        for b in &bottom_ids {
            if seen.insert(b.clone()) {
                node_ids.push(b.clone());
            }
        }
        Self {
            node_ids,
            edges,
            bottom_ids,
        }
    }

    /// Parses the plain-text edge-list format: one constraint per line,
    /// `PARENT = CHILD1 + CHILD2 + ...`. Lines starting with `#` and blank
    /// lines are skipped. Bottom nodes are those never on a left-hand side,
    /// ordered by first appearance.
    pub fn parse(text: &str) -> Result<Self> {
        let mut edges: Vec<(String, Vec<String>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = line.split_once('=').ok_or_else(|| {
                ReconError::ConfigError(format!("line {}: expected PARENT = CHILD + ...", lineno + 1))
            })?;
            let parent = lhs.trim();
            if parent.is_empty() {
                return Err(ReconError::ConfigError(format!(
                    "line {}: empty parent label",
                    lineno + 1
                )));
            }
            let mut children = Vec::new();
            for tok in rhs.split('+') {
                let child = tok.trim();
                if child.is_empty() {
                    return Err(ReconError::ConfigError(format!(
                        "line {}: empty child label",
                        lineno + 1
                    )));
                }
                children.push(child.to_string());
            }
            edges.push((parent.to_string(), children));
        }
        if edges.is_empty() {
            return Err(ReconError::ConfigError(
                "hierarchy file has no constraint lines".into(),
            ));
        }
        let parents: HashSet<&str> = edges.iter().map(|(p, _)| p.as_str()).collect();
        let mut bottom_ids = Vec::new();
        let mut seen = HashSet::new();
        for (_, children) in &edges {
            for child in children {
                if !parents.contains(child.as_str()) && seen.insert(child.clone()) {
                    bottom_ids.push(child.clone());
                }
            }
        }
        Ok(Self::new(edges, bottom_ids))
    }
}

/// The summing matrix and the block operators derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SummingMatrix {
    /// m×n aggregation matrix; bottom block is I_n.
    pub s: DMatrix<f64>,
    /// m*×n aggregate rows of S.
    pub c: DMatrix<f64>,
    /// n×m bottom selector [0 | I_n].
    pub j: DMatrix<f64>,
    /// m*×m null-space rows [I_{m*} | −C]; u_t · S = 0.
    pub u_t: DMatrix<f64>,
    pub m: usize,
    pub n: usize,
    pub m_star: usize,
    /// Row labels in S order (aggregates first, then bottom_ids).
    pub labels: Vec<String>,
    /// Height per row: longest path down to a leaf. Bottom rows have
    /// height 0; the top aggregate has the maximum.
    pub levels: Vec<usize>,
}

impl SummingMatrix {
    /// Labels of the aggregate rows only.
    pub fn aggregate_labels(&self) -> &[String] {
        &self.labels[..self.m_star]
    }

    /// Labels of the bottom rows only.
    pub fn bottom_labels(&self) -> &[String] {
        &self.labels[self.m_star..]
    }
}

/// Builds S (and the J, C, U blocks) from a hierarchy spec.
///
/// Aggregate rows are ordered by descending height, ties broken by
/// declaration order; bottom rows follow in `bottom_ids` order. The rule is
/// deterministic so identical specs yield identical matrices.
pub fn build_summing_matrix(spec: &HierarchySpec) -> Result<SummingMatrix> {
    if spec.bottom_ids.is_empty() {
        return Err(ReconError::EmptyBottomLevel);
    }
    let mut bottom_index = HashMap::new();
    for (i, b) in spec.bottom_ids.iter().enumerate() {
        if bottom_index.insert(b.as_str(), i).is_some() {
            return Err(ReconError::DuplicateNode(b.clone()));
        }
    }
    let mut children_of: HashMap<&str, &[String]> = HashMap::new();
    for (parent, children) in &spec.edges {
        if children_of.insert(parent.as_str(), children).is_some() {
            return Err(ReconError::DuplicateNode(parent.clone()));
        }
        let mut in_row = HashSet::new();
        for child in children {
            if !in_row.insert(child.as_str()) {
                return Err(ReconError::DuplicateNode(child.clone()));
            }
        }
        if bottom_index.contains_key(parent.as_str()) {
            return Err(ReconError::ConfigError(format!(
                "bottom node {parent} appears as a parent"
            )));
        }
    }
    for node in &spec.node_ids {
        if !bottom_index.contains_key(node.as_str()) && !children_of.contains_key(node.as_str()) {
            return Err(ReconError::ConfigError(format!(
                "node {node} has no children and is not a bottom node"
            )));
        }
    }

    let n = spec.bottom_ids.len();
    // Resolve each node to its bottom indicator row and its height by
    // depth-first traversal; `state` guards against cycles.
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Fresh,
        Active,
        Done,
    }
    let mut state: HashMap<&str, State> = HashMap::new();
    let mut indicator: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut height: HashMap<&str, usize> = HashMap::new();

    fn resolve<'a>(
        node: &'a str,
        n: usize,
        bottom_index: &HashMap<&str, usize>,
        children_of: &HashMap<&'a str, &'a [String]>,
        state: &mut HashMap<&'a str, State>,
        indicator: &mut HashMap<&'a str, Vec<f64>>,
        height: &mut HashMap<&'a str, usize>,
    ) -> Result<()> {
        match state.get(node).copied().unwrap_or(State::Fresh) {
            State::Done => return Ok(()),
            State::Active => return Err(ReconError::CycleDetected(node.to_string())),
            State::Fresh => {}
        }
        state.insert(node, State::Active);
        if let Some(&i) = bottom_index.get(node) {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            indicator.insert(node, row);
            height.insert(node, 0);
        } else {
            let children = children_of
                .get(node)
                .copied()
                .ok_or_else(|| ReconError::ConfigError(format!("unknown node {node}")))?;
            let mut row = vec![0.0; n];
            let mut h = 0usize;
            for child in children {
                resolve(
                    child,
                    n,
                    bottom_index,
                    children_of,
                    state,
                    indicator,
                    height,
                )?;
                for (acc, v) in row.iter_mut().zip(indicator[child.as_str()].iter()) {
                    *acc += v;
                }
                h = h.max(height[child.as_str()] + 1);
            }
            if row.iter().any(|&v| v > 1.0) {
                return Err(ReconError::ConfigError(format!(
                    "aggregate {node} counts a bottom series more than once"
                )));
            }
            indicator.insert(node, row);
            height.insert(node, h);
        }
        state.insert(node, State::Done);
        Ok(())
    }

    for node in &spec.node_ids {
        resolve(
            node,
            n,
            &bottom_index,
            &children_of,
            &mut state,
            &mut indicator,
            &mut height,
        )?;
    }

    // Aggregates: descending height, then declaration order.
    let mut aggregates: Vec<(usize, &str)> = spec
        .edges
        .iter()
        .enumerate()
        .map(|(decl, (p, _))| (decl, p.as_str()))
        .collect();
    aggregates.sort_by_key(|&(decl, node)| (std::cmp::Reverse(height[node]), decl));

    let m_star = aggregates.len();
    let m = m_star + n;
    let mut s = DMatrix::<f64>::zeros(m, n);
    let mut labels = Vec::with_capacity(m);
    let mut levels = Vec::with_capacity(m);
    for (r, &(_, node)) in aggregates.iter().enumerate() {
        for (col, &v) in indicator[node].iter().enumerate() {
            s[(r, col)] = v;
        }
        labels.push(node.to_string());
        levels.push(height[node]);
    }
    for (i, b) in spec.bottom_ids.iter().enumerate() {
        s[(m_star + i, i)] = 1.0;
        labels.push(b.clone());
        levels.push(0);
    }

    let c = s.rows(0, m_star).into_owned();
    let mut j = DMatrix::<f64>::zeros(n, m);
    for i in 0..n {
        j[(i, m_star + i)] = 1.0;
    }
    let mut u_t = DMatrix::<f64>::zeros(m_star, m);
    for i in 0..m_star {
        u_t[(i, i)] = 1.0;
        for col in 0..n {
            u_t[(i, m_star + col)] = -c[(i, col)];
        }
    }

    Ok(SummingMatrix {
        s,
        c,
        j,
        u_t,
        m,
        n,
        m_star,
        labels,
        levels,
    })
}

/// Recomputes Uᵀ from the stored S, validating the bottom-block ordering.
pub fn derive_null_space(sm: &SummingMatrix) -> Result<DMatrix<f64>> {
    let (m, n) = (sm.s.nrows(), sm.s.ncols());
    let m_star = m - n;
    for i in 0..n {
        for col in 0..n {
            let expect = if i == col { 1.0 } else { 0.0 };
            if sm.s[(m_star + i, col)] != expect {
                return Err(ReconError::OrderingViolated);
            }
        }
    }
    let mut u_t = DMatrix::<f64>::zeros(m_star, m);
    for i in 0..m_star {
        u_t[(i, i)] = 1.0;
        for col in 0..n {
            u_t[(i, m_star + col)] = -sm.s[(i, col)];
        }
    }
    Ok(u_t)
}

/// Aligned observations: every row satisfies y_t = S b_t up to tolerance.
#[derive(Debug, Clone)]
pub struct ObservationPanel {
    /// T×m observations in S row order.
    pub y: DMatrix<f64>,
    /// T×n bottom-level slice.
    pub b: DMatrix<f64>,
    /// Integer tick per row.
    pub time_index: Vec<i64>,
}

impl ObservationPanel {
    /// Aggregates bottom-level rows up through S.
    pub fn from_bottom(b: DMatrix<f64>, sm: &SummingMatrix, start_tick: i64) -> Result<Self> {
        if b.ncols() != sm.n {
            return Err(ReconError::DimensionMismatch {
                expected: format!("{} bottom columns", sm.n),
                actual: format!("{}", b.ncols()),
            });
        }
        let y = &b * sm.s.transpose();
        let time_index = (0..b.nrows() as i64).map(|t| start_tick + t).collect();
        Ok(Self { y, b, time_index })
    }

    /// Wraps a full panel, extracting the bottom block through J.
    pub fn from_full(y: DMatrix<f64>, sm: &SummingMatrix, time_index: Vec<i64>) -> Result<Self> {
        if y.ncols() != sm.m {
            return Err(ReconError::DimensionMismatch {
                expected: format!("{} columns", sm.m),
                actual: format!("{}", y.ncols()),
            });
        }
        if time_index.len() != y.nrows() {
            return Err(ReconError::DimensionMismatch {
                expected: format!("{} time ticks", y.nrows()),
                actual: format!("{}", time_index.len()),
            });
        }
        let b = y.columns(sm.m_star, sm.n).into_owned();
        Ok(Self { y, b, time_index })
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }
}

/// Row-level coherence diagnostics from `validate_coherence`.
#[derive(Debug, Clone)]
pub struct CoherenceReport {
    /// max over rows of ‖y_t − S b_t‖_∞.
    pub max_violation: f64,
    /// Rows whose violation exceeds the tolerance, with their violations.
    pub incoherent_rows: Vec<(usize, f64)>,
}

/// Measures how far each panel row is from satisfying y_t = S b_t.
pub fn validate_coherence(
    panel: &ObservationPanel,
    sm: &SummingMatrix,
    tol: f64,
) -> Result<CoherenceReport> {
    if panel.y.ncols() != sm.m {
        return Err(ReconError::DimensionMismatch {
            expected: format!("{} columns", sm.m),
            actual: format!("{}", panel.y.ncols()),
        });
    }
    let implied = &panel.b * sm.s.transpose();
    let mut max_violation = 0.0_f64;
    let mut incoherent_rows = Vec::new();
    for t in 0..panel.y.nrows() {
        let mut row_max = 0.0_f64;
        for c in 0..sm.m {
            row_max = row_max.max((panel.y[(t, c)] - implied[(t, c)]).abs());
        }
        if row_max > tol {
            incoherent_rows.push((t, row_max));
        }
        max_violation = max_violation.max(row_max);
    }
    Ok(CoherenceReport {
        max_violation,
        incoherent_rows,
    })
}

/// The two-level, five-leaf example structure used across the test suite.
pub fn figure1_spec() -> HierarchySpec {
    HierarchySpec::new(
        vec![
            (
                "Total".into(),
                vec!["A".into(), "B".into()],
            ),
            (
                "A".into(),
                vec!["AA".into(), "AB".into(), "AC".into()],
            ),
            ("B".into(), vec!["BA".into(), "BB".into()]),
        ],
        vec![
            "AA".into(),
            "AB".into(),
            "AC".into(),
            "BA".into(),
            "BB".into(),
        ],
    )
}
