//! Integrity, pattern-cost and generalization-loss measures over tabular
//! releases. Quantities that cannot be computed from their inputs come back
//! as `None`.

use super::MetricError;

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeNode {
    pub name: String,
    pub parent: Option<usize>,
    /// IV in [0, 1].
    pub integrity: f64,
    /// ROW in [0, 1].
    pub consistency: f64,
}

/// A constraint with its violation count `nv` and weight `wc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub violations: f64,
    pub weight: f64,
}

/// Tree of attribute classes plus simple (single-attribute) and complex
/// (cross-attribute) constraints. Nodes can only attach to existing parents,
/// so the structure is acyclic by construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeTree {
    nodes: Vec<AttributeNode>,
    simple: Vec<Constraint>,
    complex: Vec<Constraint>,
}

fn unit(x: f64, what: &str) -> Result<(), MetricError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(MetricError::InvalidArgument(format!("{what} must lie in [0,1], got {x}")))
    }
}

fn check_constraint(c: Constraint) -> Result<Constraint, MetricError> {
    if c.violations >= 0.0 && c.weight >= 0.0 && c.violations.is_finite() && c.weight.is_finite() {
        Ok(c)
    } else {
        Err(MetricError::InvalidArgument(format!("constraint needs nv >= 0 and wc >= 0, got {c:?}")))
    }
}

impl AttributeTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: impl Into<String>, parent: Option<usize>, integrity: f64, consistency: f64) -> Result<usize, MetricError> {
        if let Some(p) = parent {
            if p >= self.nodes.len() {
                return Err(MetricError::InvalidArgument(format!("unknown parent node {p}")));
            }
        }
        unit(integrity, "integrity value")?;
        unit(consistency, "consistency value")?;
        self.nodes.push(AttributeNode { name: name.into(), parent, integrity, consistency });
        Ok(self.nodes.len() - 1)
    }

    pub fn add_simple_constraint(&mut self, c: Constraint) -> Result<(), MetricError> {
        self.simple.push(check_constraint(c)?);
        Ok(())
    }

    pub fn add_complex_constraint(&mut self, c: Constraint) -> Result<(), MetricError> {
        self.complex.push(check_constraint(c)?);
        Ok(())
    }

    pub fn nodes(&self) -> &[AttributeNode] {
        &self.nodes
    }
}

/// Missing-measurement and lack-of-consistency totals:
/// `ML = Σ (IV + ROW)` over nodes, `LC = Σ nv·wc` over all constraints.
pub fn ml_lc(tree: &AttributeTree) -> (f64, f64) {
    let ml = tree.nodes.iter().map(|n| n.integrity + n.consistency).sum();
    let lc = tree.simple.iter().chain(&tree.complex).map(|c| c.violations * c.weight).sum();
    (ml, lc)
}

/// Pattern-hiding costs. `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternMetrics {
    pub me: Option<f64>,
    pub mc: Option<f64>,
    pub cf: Option<f64>,
    pub ap: Option<f64>,
}

/// Per-pattern support counts before and after sanitization.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCounts {
    pub original: Vec<f64>,
    pub sanitized: Vec<f64>,
    /// Weight of each pattern in the failure cost; empty means all ones.
    pub weights: Vec<f64>,
}

/// `Me = Σ(|FI(pv)| − |FI(pv')|)/N_sim`, `MC = (TR(D) − TR(D'))/TR(D)` with
/// TR the total support, `CF` the same ratio over weighted supports, and
/// `AP = Σ precision / R_p`.
pub fn pattern_metrics(counts: &PatternCounts, n_sim: f64, precisions: &[f64], retrieved: f64) -> Result<PatternMetrics, MetricError> {
    if counts.original.len() != counts.sanitized.len() {
        return Err(MetricError::LengthMismatch(counts.original.len(), counts.sanitized.len()));
    }
    if !counts.weights.is_empty() && counts.weights.len() != counts.original.len() {
        return Err(MetricError::LengthMismatch(counts.original.len(), counts.weights.len()));
    }
    let ratio = |num: f64, den: f64| (den != 0.0).then(|| num / den);
    let diff: f64 = counts.original.iter().zip(&counts.sanitized).map(|(a, b)| a - b).sum();
    let tr: f64 = counts.original.iter().sum();
    let weight = |i: usize| counts.weights.get(i).copied().unwrap_or(1.0);
    let (mut wd, mut wt) = (0.0, 0.0);
    for (i, (a, b)) in counts.original.iter().zip(&counts.sanitized).enumerate() {
        wd += weight(i) * (a - b);
        wt += weight(i) * a;
    }
    Ok(PatternMetrics {
        me: ratio(diff, n_sim),
        mc: ratio(tr - counts.sanitized.iter().sum::<f64>(), tr),
        cf: ratio(wd, wt),
        ap: ratio(precisions.iter().sum(), retrieved),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationScheme {
    /// h: generalization depth.
    pub depth: u32,
    /// |GT_{A_i}| per attribute.
    pub branch_sizes: Vec<u32>,
    /// N: transactions.
    pub transactions: usize,
}

/// `Σ_{attributes} Σ_{transactions} h/|GT_{A_i}|` over `|T|·N_A`.
pub fn info_loss_generalization(scheme: &GeneralizationScheme) -> Result<Option<f64>, MetricError> {
    if scheme.branch_sizes.contains(&0) {
        return Err(MetricError::InvalidArgument("branch sizes must be at least 1".into()));
    }
    let n_a = scheme.branch_sizes.len();
    let n = scheme.transactions;
    if n == 0 || n_a == 0 {
        return Ok(None);
    }
    let h = f64::from(scheme.depth);
    let total: f64 = scheme.branch_sizes.iter().map(|&g| n as f64 * h / f64::from(g)).sum();
    Ok(Some(total / (n as f64 * n_a as f64)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossMetric {
    /// Mean over every cell of the defined columns.
    pub overall: Option<f64>,
    /// `None` where the attribute domain has a single value.
    pub per_column: Vec<Option<f64>>,
}

/// Loss metric: mean of `(f − 1)/(G − 1)` over cells, where `f` is the size
/// of the generalized group a cell fell into and `G` its attribute's domain size.
pub fn lm(group_sizes: &[Vec<usize>], domain_sizes: &[usize]) -> Result<LossMetric, MetricError> {
    if group_sizes.is_empty() {
        return Err(MetricError::Empty);
    }
    let cols = domain_sizes.len();
    if let Some(r) = group_sizes.iter().find(|r| r.len() != cols) {
        return Err(MetricError::LengthMismatch(r.len(), cols));
    }
    let mut per_column = Vec::with_capacity(cols);
    let (mut sum, mut cells) = (0.0, 0usize);
    for (j, &g) in domain_sizes.iter().enumerate() {
        if g == 0 {
            return Err(MetricError::InvalidArgument(format!("domain size of column {j} is zero")));
        }
        if g == 1 {
            per_column.push(None);
            continue;
        }
        let mut col = 0.0;
        for row in group_sizes {
            let f = row[j];
            if f == 0 || f > g {
                return Err(MetricError::InvalidArgument(format!("group size {f} outside 1..={g} in column {j}")));
            }
            col += (f - 1) as f64 / (g - 1) as f64;
        }
        sum += col;
        cells += group_sizes.len();
        per_column.push(Some(col / group_sizes.len() as f64));
    }
    Ok(LossMetric { overall: (cells > 0).then(|| sum / cells as f64), per_column })
}

/// Classification metric: mean row penalty.
pub fn cm(row_penalties: &[f64]) -> Option<f64> {
    (!row_penalties.is_empty()).then(|| row_penalties.iter().sum::<f64>() / row_penalties.len() as f64)
}

/// Discernibility metric: `Σ_t |G(t)| = Σ_g |g|²`.
pub fn dm(group_sizes: &[usize]) -> u64 {
    group_sizes.iter().map(|&g| (g as u64) * (g as u64)).sum()
}
