//! Reweighted-ℓ1 baselines: concave separable sparsity surrogates attacked
//! by majorize–minimize, for comparison against the exact selection-system
//! solver.
//!
//! Each round linearizes the concave surrogate at the current point and
//! solves the resulting convex QP, which majorizes the true penalized
//! objective — so the penalized objective descends monotonically.  Sparsity
//! is only reached asymptotically as the penalty weight grows; there is no
//! built-in budget, which is exactly the contrast with the exact approach.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::qp::{solve_qp, ConvexQpProblem, QpSettings, SolveStatus};
use crate::sparsity::numeric_card;

/// The two surrogate families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateKind {
    /// `s(t) = (t + ε)^p`, `0 < p ≤ 1`: polynomial approach to the step.
    Lp,
    /// `s(t) = 1 − e^{−t/p}`, `p > 0`: exponential approach, scale `p`.
    Exp,
}

/// A surrogate penalty run: family, shape, weight and loop controls.
#[derive(Debug, Clone)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    /// Shape parameter: the exponent for `Lp`, the scale for `Exp`.
    pub p: f64,
    /// Smoothing offset keeping the `Lp` derivative finite at zero.
    pub epsilon_smooth: f64,
    /// Penalty weight on the surrogate sum.
    pub mu: f64,
    /// Iterate-distance stopping tolerance.
    pub eps: f64,
    pub max_iter: usize,
}

impl SurrogateSpec {
    /// The `Lp` family at its standard shape: `p = 0.5`, `ε = 10⁻⁶`.
    pub fn lp(mu: f64) -> Self {
        Self { kind: SurrogateKind::Lp, p: 0.5, epsilon_smooth: 1e-6, mu, eps: 1e-7, max_iter: 100 }
    }

    /// The `Exp` family at its standard scale: `p = 0.01`.
    pub fn exp(mu: f64) -> Self {
        Self { kind: SurrogateKind::Exp, p: 0.01, epsilon_smooth: 0.0, mu, eps: 1e-7, max_iter: 100 }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            SurrogateKind::Lp => {
                if !(self.p > 0.0 && self.p <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "Lp exponent must lie in (0, 1], got {}",
                        self.p
                    )));
                }
                if self.p < 1.0 && !(self.epsilon_smooth > 0.0) {
                    return Err(Error::InvalidConfig(
                        "Lp smoothing must be positive to keep weights finite at zero".into(),
                    ));
                }
            }
            SurrogateKind::Exp => {
                if !(self.p > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "Exp scale must be positive, got {}",
                        self.p
                    )));
                }
            }
        }
        if !(self.epsilon_smooth >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "smoothing must be nonnegative, got {}",
                self.epsilon_smooth
            )));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "penalty weight must be finite and nonnegative, got {}",
                self.mu
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Surrogate sum `Σᵢ s(xᵢ)` (entries clamped to the nonnegative axis).
pub fn surrogate_value(spec: &SurrogateSpec, x: &DVector<f64>) -> f64 {
    x.iter()
        .map(|&t| {
            let t = t.max(0.0);
            match spec.kind {
                SurrogateKind::Lp => (t + spec.epsilon_smooth).powf(spec.p),
                SurrogateKind::Exp => 1.0 - (-t / spec.p).exp(),
            }
        })
        .sum()
}

/// Linearization weights `wᵢ = s′(xᵢ)` (entries clamped to the nonnegative
/// axis); always nonnegative, decreasing in the entry size — large entries
/// get cheap, small ones expensive.
pub fn surrogate_weights(spec: &SurrogateSpec, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let t = x[i].max(0.0);
        match spec.kind {
            SurrogateKind::Lp => spec.p * (t + spec.epsilon_smooth).powf(spec.p - 1.0),
            SurrogateKind::Exp => (-t / spec.p).exp() / spec.p,
        }
    })
}

/// Result of a single [`baseline_solve`] run.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub x: DVector<f64>,
    /// Base objective at `x` (surrogate excluded).
    pub objective: f64,
    pub cardinality: usize,
    /// Majorize–minimize rounds completed.
    pub iterations: usize,
    /// Subproblem solver iterations, one entry per round.
    pub subproblem_iterations: Vec<usize>,
    /// Wall-clock seconds inside the subproblem solver.
    pub subproblem_seconds: f64,
    /// True penalized objective `f(x) + μ Σ s(xᵢ)` after each round; the
    /// majorization makes this non-increasing.
    pub penalized_objectives: Vec<f64>,
    /// Iterates settled within `eps` before the round limit.
    pub converged: bool,
}

/// Runs majorize–minimize on `f(x) + μ Σᵢ s(xᵢ)` over the base constraint
/// rows, seeded at the relaxed optimum.
pub fn baseline_solve(
    base: &ConvexQpProblem,
    spec: &SurrogateSpec,
    zero_tol: f64,
    settings: &QpSettings,
) -> Result<BaselineResult> {
    spec.validate()?;
    let relaxed = solve_qp(base, settings)?;
    match relaxed.status {
        SolveStatus::Solved => {}
        SolveStatus::PrimalInfeasible => {
            return Err(Error::InvalidProblem("the base problem is infeasible".into()));
        }
        SolveStatus::DualInfeasible => {
            return Err(Error::SubproblemFailure("the base problem is unbounded below".into()));
        }
        SolveStatus::MaxIterations => {
            return Err(Error::SubproblemFailure(format!(
                "relaxed solve stalled (residuals {:.2e}/{:.2e})",
                relaxed.primal_residual, relaxed.dual_residual
            )));
        }
    }
    let mut x = relaxed.x;
    let mut iterations = 0usize;
    let mut sub_iters = Vec::new();
    let mut sub_seconds = 0.0_f64;
    let mut penalized = Vec::new();
    let mut converged = false;

    for _ in 1..=spec.max_iter {
        let w = surrogate_weights(spec, &x);
        let tilted_q = DVector::from_fn(base.n(), |i, _| base.q()[i] + spec.mu * w[i]);
        let sub = ConvexQpProblem::new(
            base.p().clone(),
            tilted_q,
            base.a().clone(),
            base.l().clone(),
            base.u().clone(),
        )?;
        let clock = Instant::now();
        let sol = solve_qp(&sub, settings)?;
        sub_seconds += clock.elapsed().as_secs_f64();
        iterations += 1;
        sub_iters.push(sol.iterations);
        match sol.status {
            SolveStatus::Solved => {}
            SolveStatus::MaxIterations => {
                penalized.push(base.objective(&sol.x) + spec.mu * surrogate_value(spec, &sol.x));
                x = sol.x;
                break;
            }
            SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible => {
                return Err(Error::SubproblemFailure(format!(
                    "surrogate subproblem reported {:?} in round {iterations}",
                    sol.status
                )));
            }
        }
        let x_next = sol.x;
        penalized.push(base.objective(&x_next) + spec.mu * surrogate_value(spec, &x_next));
        let dist = (&x_next - &x).norm();
        x = x_next;
        if dist <= spec.eps {
            converged = true;
            break;
        }
    }

    Ok(BaselineResult {
        objective: base.objective(&x),
        cardinality: numeric_card(&x, zero_tol),
        x,
        iterations,
        subproblem_iterations: sub_iters,
        subproblem_seconds: sub_seconds,
        penalized_objectives: penalized,
        converged,
    })
}

/// The standard penalty-weight grid: whole decades from `10⁻⁴` to `10⁸`.
pub fn default_mu_sweep() -> Vec<f64> {
    (-4..=8).map(|e| 10f64.powi(e)).collect()
}

/// Result of sweeping the penalty weight up until the iterate meets a
/// cardinality budget.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub result: BaselineResult,
    /// Weight the reported run used.
    pub mu: f64,
    /// A weight in the grid reached the budget; when false, `result` is
    /// the run at the largest weight.
    pub met_budget: bool,
}

/// Runs [`baseline_solve`] along [`default_mu_sweep`] and returns the first
/// run whose cardinality meets `budget`, or the last run otherwise.
pub fn sweep_to_budget(
    base: &ConvexQpProblem,
    kind: SurrogateKind,
    budget: usize,
    zero_tol: f64,
    settings: &QpSettings,
) -> Result<SweepOutcome> {
    let mut last: Option<SweepOutcome> = None;
    for mu in default_mu_sweep() {
        let spec = match kind {
            SurrogateKind::Lp => SurrogateSpec::lp(mu),
            SurrogateKind::Exp => SurrogateSpec::exp(mu),
        };
        let result = baseline_solve(base, &spec, zero_tol, settings)?;
        let met_budget = result.cardinality <= budget;
        let outcome = SweepOutcome { result, mu, met_budget };
        if met_budget {
            return Ok(outcome);
        }
        last = Some(outcome);
    }
    Ok(last.expect("the sweep grid is never empty"))
}
