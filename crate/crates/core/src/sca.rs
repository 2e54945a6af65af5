//! Successive convex approximation for cardinality-constrained QPs.
//!
//! The cardinality bound `‖x‖₀ ≤ K` is replaced by the selection system
//! `eᵀx − xᵀy ≤ 0`, `Σyᵢ ≤ K`, `0 ≤ y ≤ 1`; the bilinear gap is linearized
//! at the current pair and moved into the objective with a growing penalty
//! weight.  Each round solves one convex QP over `(x, y)`, applies the
//! selector reset rules, and stops once the iterates settle on a point
//! within budget.  A returned optimum is certified by re-solving the convex
//! problem restricted to its support.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oracle::{restricted_solve, RestrictedOutcome};
use crate::qp::{solve_qp, ConvexQpProblem, QpSettings, QpSolution, SolveStatus};
use crate::sparsity::{
    linearized_gap, numeric_card, top_k_indicator, top_k_sum, SparsePair, SupportSet,
    DEFAULT_ZERO_TOL,
};

/// Relative tolerance on the objective gap to the restricted optimum below
/// which a point counts as certified.
pub const CERT_TOL: f64 = 1e-6;

/// A convex QP over `x` together with a cardinality budget.
///
/// The base problem must carry the nonnegativity of every variable as an
/// explicit row (a singleton row bounding the variable below by zero);
/// the selection-system reformulation is only valid on the nonnegative
/// orthant.  The quadratic term follows the engine convention `½xᵀPx`, so a
/// covariance-style objective `xᵀQx` enters as `P = 2Q`.
#[derive(Debug, Clone)]
pub struct CardinalityProblem {
    base: ConvexQpProblem,
    budget: usize,
    /// For each variable, the base row that pins it to the nonnegative
    /// orthant (used when splitting row duals into bound multipliers).
    nonneg_rows: Vec<usize>,
}

impl CardinalityProblem {
    pub fn new(base: ConvexQpProblem, budget: usize) -> Result<Self> {
        let n = base.n();
        if budget == 0 || budget >= n {
            return Err(Error::BudgetOutOfRange { k: budget, n });
        }
        let mut nonneg_rows = vec![usize::MAX; n];
        for r in 0..base.m() {
            let row = base.a().row(r);
            let mut nonzero = None;
            for j in 0..n {
                if row[j] != 0.0 {
                    if nonzero.is_some() {
                        nonzero = None;
                        break;
                    }
                    nonzero = Some(j);
                }
            }
            let Some(j) = nonzero else { continue };
            let c = row[j];
            let pins_below = (c > 0.0 && base.l()[r].is_finite() && base.l()[r] >= 0.0)
                || (c < 0.0 && base.u()[r].is_finite() && base.u()[r] <= 0.0);
            if pins_below && nonneg_rows[j] == usize::MAX {
                nonneg_rows[j] = r;
            }
        }
        if let Some(j) = nonneg_rows.iter().position(|&r| r == usize::MAX) {
            return Err(Error::InvalidProblem(format!(
                "variable {j} has no explicit nonnegativity row"
            )));
        }
        Ok(Self { base, budget, nonneg_rows })
    }

    pub fn base(&self) -> &ConvexQpProblem {
        &self.base
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub(crate) fn nonneg_rows(&self) -> &[usize] {
        &self.nonneg_rows
    }
}

/// Outer-loop tuning knobs.
#[derive(Debug, Clone)]
pub struct ScaConfig {
    /// Initial penalty weight.
    pub mu0: f64,
    /// Multiplicative penalty growth per round.
    pub rho_growth: f64,
    /// Joint iterate-distance stopping tolerance.
    pub eps: f64,
    /// Penalty ceiling; an uncapped geometric schedule would overwhelm the
    /// subproblem conditioning, and exactness needs only a finite weight.
    pub mu_max: f64,
    pub max_outer_iter: usize,
    /// Threshold below which an entry counts as zero.
    pub zero_tol: f64,
    pub qp_settings: QpSettings,
}

impl Default for ScaConfig {
    fn default() -> Self {
        Self {
            mu0: 10.0,
            rho_growth: 10.0,
            eps: 1e-7,
            mu_max: 1e8,
            max_outer_iter: 200,
            zero_tol: DEFAULT_ZERO_TOL,
            qp_settings: QpSettings::default(),
        }
    }
}

impl ScaConfig {
    fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0) {
            return Err(Error::InvalidConfig(format!("mu0 must be positive, got {}", self.mu0)));
        }
        if !(self.rho_growth >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho_growth must be at least 1, got {}",
                self.rho_growth
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.mu_max >= self.mu0) {
            return Err(Error::InvalidConfig(format!(
                "mu_max {} is below mu0 {}",
                self.mu_max, self.mu0
            )));
        }
        if self.max_outer_iter == 0 {
            return Err(Error::InvalidConfig("max_outer_iter must be at least 1".into()));
        }
        if !(self.zero_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "zero_tol must be nonnegative, got {}",
                self.zero_tol
            )));
        }
        Ok(())
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaStatus {
    /// The iterates converged within budget and the certification passed.
    LocalOptimum,
    /// The relaxed optimum was already within budget; no rounds were run.
    StoppedAtInitial,
    /// The round limit was hit, a subproblem stalled, or a converged point
    /// failed certification (detailed in the violation log).
    MaxIterations,
}

/// Outcome of re-solving the convex problem on a point's numeric support.
#[derive(Debug, Clone)]
pub struct CertificationRecord {
    /// Optimum of the support-restricted problem (`+∞` when infeasible).
    pub restricted_objective: f64,
    /// `|f(x) − restricted_objective|`.
    pub gap: f64,
    /// Gap within [`CERT_TOL`], relative to the objective scale.
    pub passed: bool,
    /// The restriction had no feasible point at all.
    pub restricted_infeasible: bool,
}

/// Multipliers for the selection-system stationarity conditions.  Absent
/// blocks are skipped by the residual and flagged as partial.
#[derive(Debug, Clone, Default)]
pub struct RpMultipliers {
    /// Row duals of the base constraints, engine sign convention
    /// (nonnegative at an active upper bound, nonpositive at a lower one);
    /// the nonnegativity rows' lower-side parts live in `nonneg_duals`.
    pub base_duals: Option<DVector<f64>>,
    /// Multipliers of `x ≥ 0`, one per variable, nonnegative.
    pub nonneg_duals: Option<DVector<f64>>,
    /// Multiplier of the linearized selection gap.
    pub gap_penalty: Option<f64>,
    /// Multiplier of the selector budget `Σy ≤ K`.
    pub budget_dual: Option<f64>,
    /// Multipliers of `y ≤ 1`, nonnegative.
    pub y_upper_duals: Option<DVector<f64>>,
    /// Multipliers of `y ≥ 0`, nonnegative.
    pub y_lower_duals: Option<DVector<f64>>,
}

/// Stationarity and complementarity residual of the selection system.
#[derive(Debug, Clone, Copy)]
pub struct RpKktResidual {
    pub residual: f64,
    /// Some multiplier blocks were missing and skipped.
    pub partial: bool,
}

/// Result of [`sca_solve`].
#[derive(Debug, Clone)]
pub struct ScaResult {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// Base objective at `x`.
    pub objective: f64,
    /// `(e − y)ᵀx` at exit: mass of `x` the selector fails to cover.
    pub penalty_gap: f64,
    /// Completed rounds (0 when the initial point was already sparse).
    pub outer_iterations: usize,
    /// Subproblem solver iterations, one entry per round.
    pub subproblem_iterations: Vec<usize>,
    /// Wall-clock seconds spent inside the subproblem solver.
    pub subproblem_seconds: f64,
    pub status: ScaStatus,
    pub certification: CertificationRecord,
    /// Multipliers extracted from the last subproblem (absent when no round
    /// was run).
    pub multipliers: Option<RpMultipliers>,
    /// Penalty weight of the last subproblem solved (0 when none was).
    pub mu_final: f64,
    /// Per-round invariant breaches; empty on a clean run.
    pub invariant_violations: Vec<String>,
}

impl ScaResult {
    pub fn subproblem_iterations_total(&self) -> usize {
        self.subproblem_iterations.iter().sum()
    }
}

/// Solves the cardinality-free relaxation; its optimum seeds the outer loop.
pub fn initial_point(problem: &CardinalityProblem, settings: &QpSettings) -> Result<DVector<f64>> {
    let sol = solve_qp(problem.base(), settings)?;
    match sol.status {
        SolveStatus::Solved => Ok(sol.x),
        SolveStatus::PrimalInfeasible => Err(Error::InvalidProblem(
            "the relaxed problem is infeasible, so the cardinality-constrained problem is too"
                .into(),
        )),
        SolveStatus::DualInfeasible => {
            Err(Error::SubproblemFailure("the relaxed problem is unbounded below".into()))
        }
        SolveStatus::MaxIterations => Err(Error::SubproblemFailure(format!(
            "relaxed solve stalled (residuals {:.2e}/{:.2e})",
            sol.primal_residual, sol.dual_residual
        ))),
    }
}

/// The convex QP over `(x, y)` for one round: the base objective plus the
/// penalized linearization of the selection gap at `(x̄, ȳ)`.
#[derive(Debug, Clone)]
pub struct PenaltySubproblem {
    pub qp: ConvexQpProblem,
    /// Constant term `μ · x̄ᵀȳ` dropped from the QP objective; add it back
    /// when reporting the modelled value.
    pub constant: f64,
    pub mu: f64,
}

/// Builds the round subproblem
/// `min f(x) + μ[(e−ȳ)ᵀx − x̄ᵀy]` subject to the base rows, `Σy ≤ K` and
/// `0 ≤ y ≤ 1`, as a `2n`-variable QP (variables ordered `[x; y]`, rows
/// ordered base / budget / selector box).
pub fn build_penalty_subproblem(
    problem: &CardinalityProblem,
    prev_x: &DVector<f64>,
    prev_y: &DVector<f64>,
    mu: f64,
) -> Result<PenaltySubproblem> {
    if !(mu > 0.0) {
        return Err(Error::InvalidConfig(format!("penalty weight must be positive, got {mu}")));
    }
    let base = problem.base();
    let n = base.n();
    if prev_x.len() != n || prev_y.len() != n {
        return Err(Error::InvalidProblem(format!(
            "linearization point has lengths {}/{}, expected {n}",
            prev_x.len(),
            prev_y.len()
        )));
    }
    let m = base.m();
    let nv = 2 * n;
    let mut p = DMatrix::zeros(nv, nv);
    p.view_mut((0, 0), (n, n)).copy_from(base.p());
    let mut q = DVector::zeros(nv);
    for i in 0..n {
        q[i] = base.q()[i] + mu * (1.0 - prev_y[i]);
        q[n + i] = -mu * prev_x[i];
    }
    let rows = m + 1 + n;
    let mut a = DMatrix::zeros(rows, nv);
    a.view_mut((0, 0), (m, n)).copy_from(base.a());
    for j in 0..n {
        a[(m, n + j)] = 1.0;
    }
    for i in 0..n {
        a[(m + 1 + i, n + i)] = 1.0;
    }
    let mut l = DVector::zeros(rows);
    let mut u = DVector::zeros(rows);
    l.rows_mut(0, m).copy_from(base.l());
    u.rows_mut(0, m).copy_from(base.u());
    l[m] = f64::NEG_INFINITY;
    u[m] = problem.budget() as f64;
    for i in 0..n {
        l[m + 1 + i] = 0.0;
        u[m + 1 + i] = 1.0;
    }
    let qp = ConvexQpProblem::new(p, q, a, l, u)?;
    Ok(PenaltySubproblem { qp, constant: mu * prev_x.dot(prev_y), mu })
}

/// Records breaches of the per-round iterate invariants: the selector must
/// be a budget-exact binary indicator and the decision vector keeps at
/// least `K` live entries while the relaxed optimum is dense.
fn record_iterate_invariants(
    x: &DVector<f64>,
    y: &DVector<f64>,
    k: usize,
    zero_tol: f64,
    round: usize,
    violations: &mut Vec<String>,
) {
    let worst_binary =
        y.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs().min((v - 1.0).abs())));
    if worst_binary > zero_tol {
        violations.push(format!(
            "round {round}: selector entry {worst_binary:.3e} away from binary"
        ));
    }
    let ones = y.iter().filter(|&&v| v > 0.5).count();
    if ones != k {
        violations.push(format!("round {round}: selector marks {ones} entries, budget is {k}"));
    }
    let card = numeric_card(x, zero_tol);
    if card < k {
        violations.push(format!(
            "round {round}: decision vector kept {card} entries, expected at least {k}"
        ));
    }
}

/// Runs the penalized successive convex approximation loop.
///
/// Each round: (1) the relaxed optimum seeds the loop and short-circuits
/// when already sparse enough; (2) one convex subproblem is solved at the
/// current pair; (3) the loop stops when the joint iterate distance falls
/// within tolerance *and* the new point is within budget; (4) a selector
/// that misses mass of the new point resets to the point's top-K indicator;
/// (5) an over-budget selector resets to the previous point's indicator;
/// (6) the penalty weight grows geometrically up to its cap.
///
/// On exit the point is certified against its support-restricted optimum.
/// A converged, certified run reports `LocalOptimum`; a sparse relaxed
/// optimum reports `StoppedAtInitial`; everything else reports
/// `MaxIterations` with the best iterate and a violation log.
pub fn sca_solve(problem: &CardinalityProblem, config: &ScaConfig) -> Result<ScaResult> {
    config.validate()?;
    let n = problem.n();
    let k = problem.budget();
    let qp = &config.qp_settings;

    let x0 = initial_point(problem, qp)?;
    if numeric_card(&x0, config.zero_tol) <= k {
        let y0 = top_k_indicator(&x0, k)?;
        let penalty_gap = x0.sum() - x0.dot(&y0);
        let objective = problem.base().objective(&x0);
        let certification = certify_local_optimum(problem, &x0, config.zero_tol, qp)?;
        return Ok(ScaResult {
            x: x0,
            y: y0,
            objective,
            penalty_gap,
            outer_iterations: 0,
            subproblem_iterations: Vec::new(),
            subproblem_seconds: 0.0,
            status: ScaStatus::StoppedAtInitial,
            certification,
            multipliers: None,
            mu_final: 0.0,
            invariant_violations: Vec::new(),
        });
    }

    let mut x = x0;
    let mut y = top_k_indicator(&x, k)?;
    let mut mu = config.mu0;
    let mut violations: Vec<String> = Vec::new();
    let mut sub_iters: Vec<usize> = Vec::new();
    let mut sub_seconds = 0.0_f64;
    let mut outer = 0usize;
    let mut converged = false;
    let mut last: Option<(f64, QpSolution)> = None;

    for round in 1..=config.max_outer_iter {
        let sub = build_penalty_subproblem(problem, &x, &y, mu)?;
        let clock = Instant::now();
        let sol = solve_qp(&sub.qp, qp)?;
        sub_seconds += clock.elapsed().as_secs_f64();
        outer = round;
        sub_iters.push(sol.iterations);
        match sol.status {
            SolveStatus::Solved => {}
            SolveStatus::MaxIterations => {
                violations.push(format!(
                    "round {round}: subproblem stalled (residuals {:.2e}/{:.2e})",
                    sol.primal_residual, sol.dual_residual
                ));
                last = Some((mu, sol));
                break;
            }
            SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible => {
                return Err(Error::SubproblemFailure(format!(
                    "penalty subproblem reported {:?} in round {round}",
                    sol.status
                )));
            }
        }
        let x_next = DVector::from_fn(n, |i, _| sol.x[i]);
        let mut y_next = DVector::from_fn(n, |i, _| sol.x[n + i]);

        // The selection block of the subproblem maximizes x̄ᵀy over the
        // budget polytope, whose value is the top-K sum of x̄.
        let psi = top_k_sum(&x, k)?;
        let selection_value = x.dot(&y_next);
        if (selection_value - psi).abs() > 1e-6 * (1.0 + psi.abs()) {
            violations.push(format!(
                "round {round}: selection value {selection_value:.9e} deviates from \
                 top-{k} sum {psi:.9e}"
            ));
        }
        let phi = linearized_gap(&x, &y, &x_next, &y_next);
        if phi < -config.zero_tol {
            violations.push(format!(
                "round {round}: linearized gap {phi:.3e} fell below zero"
            ));
        }

        let dist = {
            let dx = &x_next - &x;
            let dy = &y_next - &y;
            (dx.norm_squared() + dy.norm_squared()).sqrt()
        };
        let stop = dist <= config.eps && numeric_card(&x_next, config.zero_tol) <= k;

        if !stop {
            // Step 4: the previous selector must cover the new point's mass.
            let residual_gap = x_next.sum() - x_next.dot(&y);
            if residual_gap > 10.0 * config.zero_tol {
                y_next = top_k_indicator(&x_next, k)?;
            }
            // Step 5: re-check the budget after the Step-4 reset.
            if numeric_card(&y_next, config.zero_tol) > k {
                y_next = top_k_indicator(&x, k)?;
            }
        }

        record_iterate_invariants(&x_next, &y_next, k, config.zero_tol, round, &mut violations);

        x = x_next;
        y = y_next;
        last = Some((mu, sol));
        if stop {
            converged = true;
            break;
        }
        mu = (mu * config.rho_growth).min(config.mu_max);
    }

    let objective = problem.base().objective(&x);
    let penalty_gap = x.sum() - x.dot(&y);
    let certification = certify_local_optimum(problem, &x, config.zero_tol, qp)?;
    let (mu_final, multipliers) = match &last {
        Some((mu_used, sol)) => {
            (*mu_used, Some(extract_rp_multipliers(problem, *mu_used, &sol.z)))
        }
        None => (0.0, None),
    };
    let status = if converged && certification.passed && penalty_gap <= 10.0 * config.zero_tol {
        ScaStatus::LocalOptimum
    } else {
        if converged && !certification.passed {
            violations.push(format!(
                "converged iterate failed certification (objective gap {:.3e})",
                certification.gap
            ));
        }
        if converged && penalty_gap > 10.0 * config.zero_tol {
            violations.push(format!(
                "penalty gap {penalty_gap:.3e} still open at convergence"
            ));
        }
        ScaStatus::MaxIterations
    };
    if status == ScaStatus::LocalOptimum {
        log_penalty_exactness_probe(problem, &x, &y, mu_final, config);
    }

    Ok(ScaResult {
        x,
        y,
        objective,
        penalty_gap,
        outer_iterations: outer,
        subproblem_iterations: sub_iters,
        subproblem_seconds: sub_seconds,
        status,
        certification,
        multipliers,
        mu_final,
        invariant_violations: violations,
    })
}

/// A finite penalty weight already makes the penalized subproblem exact; on
/// certified runs, re-solving at one growth step below the final weight
/// usually reproduces the support.  Logged only — exactness below the final
/// weight is not guaranteed without a bound on the multipliers.
fn log_penalty_exactness_probe(
    problem: &CardinalityProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    mu_final: f64,
    config: &ScaConfig,
) {
    if mu_final <= config.mu0 {
        return;
    }
    let probe_mu = mu_final / config.rho_growth;
    let Ok(sub) = build_penalty_subproblem(problem, x, y, probe_mu) else { return };
    let Ok(sol) = solve_qp(&sub.qp, &config.qp_settings) else { return };
    if sol.status != SolveStatus::Solved {
        log::debug!("exactness probe at weight {probe_mu:.1e} did not solve cleanly");
        return;
    }
    let probe_x = DVector::from_fn(problem.n(), |i, _| sol.x[i]);
    let final_support = SupportSet::from_vector(x, config.zero_tol);
    let probe_support = SupportSet::from_vector(&probe_x, config.zero_tol);
    if probe_support == final_support {
        log::debug!(
            "penalty weight {probe_mu:.1e} (one step below final) reproduces the support"
        );
    } else {
        log::info!(
            "penalty weight {probe_mu:.1e} selects support {:?} instead of {:?}",
            probe_support.indices(),
            final_support.indices()
        );
    }
}

/// Re-solves the convex problem restricted to the numeric support of `x`
/// and records the objective gap.  An infeasible restriction is recorded,
/// not raised.
pub fn certify_local_optimum(
    problem: &CardinalityProblem,
    x: &DVector<f64>,
    zero_tol: f64,
    settings: &QpSettings,
) -> Result<CertificationRecord> {
    let support = SupportSet::from_vector(x, zero_tol);
    let objective = problem.base().objective(x);
    match restricted_solve(problem.base(), &support, settings)? {
        RestrictedOutcome::Optimal { objective: restricted_objective, .. } => {
            let gap = (objective - restricted_objective).abs();
            Ok(CertificationRecord {
                restricted_objective,
                gap,
                passed: gap <= CERT_TOL * (1.0 + objective.abs()),
                restricted_infeasible: false,
            })
        }
        RestrictedOutcome::Infeasible => Ok(CertificationRecord {
            restricted_objective: f64::INFINITY,
            gap: f64::INFINITY,
            passed: false,
            restricted_infeasible: true,
        }),
    }
}

/// Splits the duals of a round subproblem (rows ordered base / budget /
/// selector box) into the selection-system multipliers.  The gap multiplier
/// is the penalty weight itself: at a settled pair the subproblem's
/// stationarity *is* the selection-system stationarity with `δ = μ`.
pub fn extract_rp_multipliers(
    problem: &CardinalityProblem,
    mu: f64,
    duals: &DVector<f64>,
) -> RpMultipliers {
    let base = problem.base();
    let n = base.n();
    let m = base.m();
    debug_assert_eq!(duals.len(), m + 1 + n);
    let mut base_duals = DVector::zeros(m);
    for r in 0..m {
        base_duals[r] = duals[r];
    }
    let mut nonneg_duals = DVector::zeros(n);
    for (i, &r) in problem.nonneg_rows().iter().enumerate() {
        let c = base.a()[(r, i)];
        if c > 0.0 {
            // Lower side of the row is the nonnegativity bound.
            nonneg_duals[i] = c * (-duals[r]).max(0.0);
            base_duals[r] = duals[r].max(0.0);
        } else {
            // The row bounds −x below; its upper side is the bound.
            nonneg_duals[i] = -c * duals[r].max(0.0);
            base_duals[r] = duals[r].min(0.0);
        }
    }
    let y_upper = DVector::from_fn(n, |i, _| duals[m + 1 + i].max(0.0));
    let y_lower = DVector::from_fn(n, |i, _| (-duals[m + 1 + i]).max(0.0));
    RpMultipliers {
        base_duals: Some(base_duals),
        nonneg_duals: Some(nonneg_duals),
        gap_penalty: Some(mu),
        budget_dual: Some(duals[m]),
        y_upper_duals: Some(y_upper),
        y_lower_duals: Some(y_lower),
    }
}

/// Max-norm residual of the selection-system stationarity and
/// complementarity conditions at a pair, for reporting.  Blocks whose
/// multipliers are absent are skipped and flagged.
pub fn kkt_residual_rp(
    problem: &CardinalityProblem,
    pair: &SparsePair,
    multipliers: &RpMultipliers,
) -> Result<RpKktResidual> {
    let base = problem.base();
    let n = base.n();
    let m = base.m();
    let k = problem.budget() as f64;
    let (x, y) = (&pair.x, &pair.y);
    if x.len() != n {
        return Err(Error::InvalidProblem(format!(
            "pair has dimension {}, problem has {n}",
            x.len()
        )));
    }
    let mut residual = 0.0_f64;
    let mut partial = false;
    let mut bump = |v: f64| residual = residual.max(v.abs());

    let ax = base.a() * x;
    // Stationarity in x: ∇f + Aᵀv + δ(e − y) − τ = 0.
    match (&multipliers.base_duals, &multipliers.nonneg_duals, multipliers.gap_penalty) {
        (Some(v), Some(tau), Some(delta)) => {
            let mut r_x = base.p() * x + base.q() + base.a().transpose() * v;
            for i in 0..n {
                r_x[i] += delta * (1.0 - y[i]) - tau[i];
            }
            bump(r_x.amax());
        }
        _ => partial = true,
    }
    // Stationarity in y: −δx + ρe + ϱ − σ = 0.
    match (
        multipliers.gap_penalty,
        multipliers.budget_dual,
        &multipliers.y_upper_duals,
        &multipliers.y_lower_duals,
    ) {
        (Some(delta), Some(rho), Some(up), Some(lo)) => {
            for i in 0..n {
                bump(-delta * x[i] + rho + up[i] - lo[i]);
            }
        }
        _ => partial = true,
    }
    // Complementarity and multiplier signs, block by block.
    if let Some(v) = &multipliers.base_duals {
        for r in 0..m {
            let (lo, hi) = (base.l()[r], base.u()[r]);
            if lo == hi {
                continue;
            }
            if v[r] > 0.0 {
                if hi.is_finite() {
                    bump(v[r] * (hi - ax[r]));
                } else {
                    bump(v[r]);
                }
            } else if v[r] < 0.0 {
                if lo.is_finite() {
                    bump(v[r] * (ax[r] - lo));
                } else {
                    bump(v[r]);
                }
            }
        }
    } else {
        partial = true;
    }
    if let Some(tau) = &multipliers.nonneg_duals {
        for i in 0..n {
            bump(tau[i] * x[i]);
            bump((-tau[i]).max(0.0));
        }
    } else {
        partial = true;
    }
    if let Some(delta) = multipliers.gap_penalty {
        bump(delta * (x.sum() - x.dot(y)));
        bump((-delta).max(0.0));
    } else {
        partial = true;
    }
    if let Some(rho) = multipliers.budget_dual {
        bump(rho.max(0.0) * (k - y.sum()));
        bump((-rho).max(0.0));
    } else {
        partial = true;
    }
    match (&multipliers.y_upper_duals, &multipliers.y_lower_duals) {
        (Some(up), Some(lo)) => {
            for i in 0..n {
                bump(up[i] * (1.0 - y[i]));
                bump(lo[i] * y[i]);
                bump((-up[i]).max(0.0));
                bump((-lo[i]).max(0.0));
            }
        }
        _ => partial = true,
    }
    Ok(RpKktResidual { residual, partial })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{capped_simplex_base, simplex_card, simplex_with_caps};
    use approx::assert_abs_diff_eq;

    #[test]
    fn problem_construction_enforces_budget_and_nonnegativity() {
        assert!(matches!(
            CardinalityProblem::new(capped_simplex_base(3, 1.0), 0),
            Err(Error::BudgetOutOfRange { .. })
        ));
        assert!(matches!(
            CardinalityProblem::new(capped_simplex_base(3, 1.0), 3),
            Err(Error::BudgetOutOfRange { .. })
        ));
        // A bare budget row pins nothing to the nonnegative orthant.
        let p = DMatrix::identity(2, 2) * 2.0;
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let base = ConvexQpProblem::new(
            p,
            DVector::zeros(2),
            a,
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert!(matches!(
            CardinalityProblem::new(base, 1),
            Err(Error::InvalidProblem(_))
        ));
    }

    #[test]
    fn subproblem_carries_the_linearized_terms() {
        let problem = simplex_card(3, 2);
        let prev_x = DVector::from_row_slice(&[0.5, 0.3, 0.2]);
        let prev_y = DVector::from_row_slice(&[1.0, 1.0, 0.0]);
        let sub = build_penalty_subproblem(&problem, &prev_x, &prev_y, 10.0).unwrap();
        assert_eq!(sub.qp.n(), 6);
        // Base rows (1 simplex + 3 boxes) + budget + 3 selector boxes.
        assert_eq!(sub.qp.m(), 4 + 1 + 3);
        let q = sub.qp.q();
        assert_eq!(q.as_slice()[..3], [0.0, 0.0, 10.0]);
        assert_eq!(q.as_slice()[3..], [-5.0, -3.0, -2.0]);
        assert_abs_diff_eq!(sub.constant, 8.0, epsilon = 1e-12);
        let budget_row = 4;
        assert_eq!(sub.qp.u()[budget_row], 2.0);
        assert!(sub.qp.l()[budget_row].is_infinite());

        assert!(matches!(
            build_penalty_subproblem(&problem, &prev_x, &prev_y, 0.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn initial_point_spreads_over_a_symmetric_toy() {
        // Unit simplex with a slack return row: symmetry forces equal mass.
        let p = DMatrix::identity(3, 3) * 2.0;
        let mut a = DMatrix::zeros(5, 3);
        for j in 0..3 {
            a[(0, j)] = 1.0;
            a[(1, j)] = 0.005;
            a[(2 + j, j)] = 1.0;
        }
        let l = DVector::from_row_slice(&[1.0, 0.004, 0.0, 0.0, 0.0]);
        let u = DVector::from_row_slice(&[1.0, f64::INFINITY, 1.0, 1.0, 1.0]);
        let base = ConvexQpProblem::new(p, DVector::zeros(3), a, l, u).unwrap();
        let problem = CardinalityProblem::new(base, 2).unwrap();
        let x0 = initial_point(&problem, &QpSettings::default()).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(x0[i], 1.0 / 3.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn solver_lands_on_the_budget_on_the_simplex() {
        let problem = simplex_card(3, 2);
        let res = sca_solve(&problem, &ScaConfig::default()).unwrap();
        assert_eq!(res.status, ScaStatus::LocalOptimum);
        assert_abs_diff_eq!(res.objective, 0.5, epsilon = 1e-6);
        assert_eq!(numeric_card(&res.x, 1e-6), 2);
        assert!(res.penalty_gap <= 1e-8);
        assert!(res.certification.passed);
        assert!(res.invariant_violations.is_empty(), "{:?}", res.invariant_violations);
        assert_eq!(res.subproblem_iterations.len(), res.outer_iterations);
        for &v in res.y.iter() {
            assert!(v.abs() <= 1e-6 || (v - 1.0).abs() <= 1e-6);
        }
        assert_abs_diff_eq!(res.y.sum(), 2.0, epsilon = 1e-6);
    }

    #[test]
    fn sparse_relaxed_optimum_short_circuits() {
        // The third coordinate is capped at zero, so the relaxed optimum is
        // already 2-sparse.
        let problem = simplex_with_caps(&[1.0, 1.0, 0.0], 2);
        let res = sca_solve(&problem, &ScaConfig::default()).unwrap();
        assert_eq!(res.status, ScaStatus::StoppedAtInitial);
        assert_eq!(res.outer_iterations, 0);
        assert!(res.subproblem_iterations.is_empty());
        assert!(res.certification.passed);
        assert_abs_diff_eq!(res.x[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(res.x[1], 0.5, epsilon = 1e-7);
        assert!(res.multipliers.is_none());
    }

    #[test]
    fn certification_rejects_a_suboptimal_support_point() {
        let problem = simplex_card(3, 2);
        let x = DVector::from_row_slice(&[0.6, 0.4, 0.0]);
        let record =
            certify_local_optimum(&problem, &x, 1e-6, &QpSettings::default()).unwrap();
        assert!(!record.passed);
        assert_abs_diff_eq!(record.restricted_objective, 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(record.gap, 0.02, epsilon = 1e-7);
    }

    #[test]
    fn certification_flags_an_infeasible_restriction() {
        let problem = simplex_with_caps(&[0.4, 0.4, 0.4], 2);
        // Feasible only with all three entries positive; its 2-entry support
        // cannot hold the unit budget.
        let x = DVector::from_row_slice(&[0.38, 0.39, 0.0]);
        let record =
            certify_local_optimum(&problem, &x, 1e-6, &QpSettings::default()).unwrap();
        assert!(record.restricted_infeasible);
        assert!(!record.passed);
        assert!(record.restricted_objective.is_infinite());
    }

    #[test]
    fn analytic_stationary_pair_has_zero_residual() {
        // Two assets, unit budget between them, one selected: with the gap
        // multiplier at 2 every condition closes exactly.
        let problem = simplex_card(2, 1);
        let pair = SparsePair::new(
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[1.0, 0.0]),
        )
        .unwrap();
        let multipliers = RpMultipliers {
            base_duals: Some(DVector::from_row_slice(&[-2.0, 0.0, 0.0])),
            nonneg_duals: Some(DVector::zeros(2)),
            gap_penalty: Some(2.0),
            budget_dual: Some(2.0),
            y_upper_duals: Some(DVector::zeros(2)),
            y_lower_duals: Some(DVector::from_row_slice(&[0.0, 2.0])),
        };
        let out = kkt_residual_rp(&problem, &pair, &multipliers).unwrap();
        assert!(!out.partial);
        assert!(out.residual <= 1e-10, "residual {}", out.residual);
    }

    #[test]
    fn zero_multipliers_reduce_to_the_gradient_norm() {
        let problem = simplex_card(2, 1);
        let pair = SparsePair::new(
            DVector::from_row_slice(&[0.3, 0.7]),
            DVector::from_row_slice(&[1.0, 0.0]),
        )
        .unwrap();
        let multipliers = RpMultipliers {
            base_duals: Some(DVector::zeros(3)),
            nonneg_duals: Some(DVector::zeros(2)),
            gap_penalty: Some(0.0),
            budget_dual: Some(0.0),
            y_upper_duals: Some(DVector::zeros(2)),
            y_lower_duals: Some(DVector::zeros(2)),
        };
        let out = kkt_residual_rp(&problem, &pair, &multipliers).unwrap();
        assert!(!out.partial);
        assert_abs_diff_eq!(out.residual, 1.4, epsilon = 1e-12);
    }

    #[test]
    fn missing_blocks_are_flagged_partial() {
        let problem = simplex_card(2, 1);
        let pair = SparsePair::new(
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[1.0, 0.0]),
        )
        .unwrap();
        let multipliers =
            RpMultipliers { gap_penalty: Some(2.0), ..RpMultipliers::default() };
        let out = kkt_residual_rp(&problem, &pair, &multipliers).unwrap();
        assert!(out.partial);
    }

    #[test]
    fn config_validation_rejects_bad_knobs() {
        let mut c = ScaConfig::default();
        c.mu0 = 0.0;
        assert!(c.validate().is_err());
        let mut c = ScaConfig::default();
        c.rho_growth = 0.5;
        assert!(c.validate().is_err());
        let mut c = ScaConfig::default();
        c.mu_max = 1.0;
        assert!(c.validate().is_err());
    }
}
