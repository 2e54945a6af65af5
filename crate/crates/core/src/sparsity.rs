//! Selection-system helpers for the cardinality constraint.
//!
//! For `x ∈ ℝⁿ₊` the sum of the `K` largest entries `ψ_K(x) = Σᵢ₌₁ᴷ x₍ᵢ₎`
//! equals `max{yᵀx : Σᵢyᵢ ≤ K, 0 ≤ y ≤ 1}`, so `‖x‖₀ ≤ K` is equivalent to
//! `eᵀx − xᵀy ≤ 0` for some `y` in that polytope.  This module evaluates the
//! top-K sum, builds the maximizing binary selector, counts numeric support,
//! and checks feasibility of an `(x, y)` pair for the reformulated system.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Default absolute threshold below which an entry counts as zero — two
/// orders of magnitude above the subproblem solver tolerance.
pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

/// Strictly increasing set of nonzero positions inside an ambient dimension.
///
/// Ordering is lexicographic on the index list, which gives enumeration code
/// a deterministic way to break ties between supports of equal quality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SupportSet {
    indices: Vec<usize>,
    n: usize,
}

impl SupportSet {
    /// Builds a support from arbitrary positions; duplicates collapse and the
    /// result is sorted.  Errors when an index reaches the ambient dimension.
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&worst) = indices.last() {
            if worst >= n {
                return Err(Error::InvalidProblem(format!(
                    "support index {worst} outside ambient dimension {n}"
                )));
            }
        }
        Ok(Self { indices, n })
    }

    /// Positions of `x` with `|xᵢ| > zero_tol`.
    pub fn from_vector(x: &DVector<f64>, zero_tol: f64) -> Self {
        let indices = (0..x.len()).filter(|&i| x[i].abs() > zero_tol).collect();
        Self { indices, n: x.len() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Binary vector with ones exactly on the support.
    pub fn indicator(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for &i in &self.indices {
            y[i] = 1.0;
        }
        y
    }
}

/// A decision vector together with its selection weights.
#[derive(Debug, Clone)]
pub struct SparsePair {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl SparsePair {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidProblem(format!(
                "dimension mismatch: x has {}, y has {}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }
}

/// Indices of the `k` largest entries of `x`, ties resolved toward the
/// lowest index.
fn top_k_indices(x: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[j].total_cmp(&x[i]).then(i.cmp(&j)));
    order.truncate(k);
    order
}

/// Sum of the `k` largest entries of `x`.
///
/// Errors when `k` exceeds the dimension; `k = 0` gives 0.
pub fn top_k_sum(x: &DVector<f64>, k: usize) -> Result<f64> {
    if k > x.len() {
        return Err(Error::BudgetOutOfRange { k, n: x.len() });
    }
    Ok(top_k_indices(x, k).into_iter().map(|i| x[i]).sum())
}

/// Binary vector with exactly `k` ones marking the `k` largest entries of
/// `x`, ties resolved toward the lowest index.
pub fn top_k_indicator(x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
    if k > x.len() {
        return Err(Error::BudgetOutOfRange { k, n: x.len() });
    }
    let mut y = DVector::zeros(x.len());
    for i in top_k_indices(x, k) {
        y[i] = 1.0;
    }
    Ok(y)
}

/// Number of entries with `|xᵢ| > zero_tol`.
pub fn numeric_card(x: &DVector<f64>, zero_tol: f64) -> usize {
    x.iter().filter(|v| v.abs() > zero_tol).count()
}

/// First-order expansion of the bilinear selection gap `eᵀx − xᵀy` at
/// `(prev_x, prev_y)`, evaluated at `(x, y)`:
///
/// ```text
///     (e − ȳ)ᵀx − x̄ᵀy + Σᵢ x̄ᵢ ȳᵢ
/// ```
pub fn linearized_gap(
    prev_x: &DVector<f64>,
    prev_y: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += (1.0 - prev_y[i]) * x[i] - prev_x[i] * y[i] + prev_x[i] * prev_y[i];
    }
    acc
}

/// One feasibility condition of the selection system: `value ≤ 0` up to the
/// tolerance used for the check.
#[derive(Debug, Clone, Copy)]
pub struct Condition {
    /// Signed violation; nonpositive (up to tolerance) means satisfied.
    pub violation: f64,
    pub ok: bool,
}

impl Condition {
    fn check(violation: f64, tol: f64) -> Self {
        Self { violation, ok: violation <= tol }
    }
}

/// Outcome of [`rp_feasibility_check`]: per-condition verdicts for a pair
/// `(x, y)` against the selection system at budget `k`.
#[derive(Debug, Clone)]
pub struct RpFeasibilityReport {
    /// `x ≥ 0` (worst negative entry).
    pub x_nonneg: Condition,
    /// `0 ≤ y ≤ 1` (worst box violation).
    pub y_box: Condition,
    /// `Σᵢ yᵢ ≤ k`.
    pub y_budget: Condition,
    /// `eᵀx − xᵀy ≤ 0`.
    pub selection_gap: Condition,
    /// `numeric_card(x, zero_tol)`, recorded for the implied support bound.
    pub cardinality: usize,
    pub budget: usize,
}

impl RpFeasibilityReport {
    /// All conditions hold.
    pub fn feasible(&self) -> bool {
        self.x_nonneg.ok && self.y_box.ok && self.y_budget.ok && self.selection_gap.ok
    }
}

/// Checks a pair against the selection system at budget `k`, each condition
/// within `zero_tol`.  When every condition holds, the numeric support of
/// `x` cannot exceed `k` (recorded in `cardinality`).
pub fn rp_feasibility_check(
    pair: &SparsePair,
    k: usize,
    zero_tol: f64,
) -> Result<RpFeasibilityReport> {
    let (x, y) = (&pair.x, &pair.y);
    if k > x.len() {
        return Err(Error::BudgetOutOfRange { k, n: x.len() });
    }
    let x_nonneg = Condition::check(x.iter().fold(0.0_f64, |w, &v| w.max(-v)), zero_tol);
    let y_box = Condition::check(
        y.iter().fold(0.0_f64, |w, &v| w.max(-v).max(v - 1.0)),
        zero_tol,
    );
    let y_budget = Condition::check(y.sum() - k as f64, zero_tol);
    let selection_gap = Condition::check(x.sum() - x.dot(y), zero_tol);
    Ok(RpFeasibilityReport {
        x_nonneg,
        y_box,
        y_budget,
        selection_gap,
        cardinality: numeric_card(x, zero_tol),
        budget: k,
    })
}
