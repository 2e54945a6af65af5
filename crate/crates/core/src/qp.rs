//! Dense convex quadratic programming engine.
//!
//! Solves problems of the form
//!
//! ```text
//!     minimize   ½ xᵀP x + qᵀx
//!     subject to l ≤ A x ≤ u
//! ```
//!
//! with symmetric positive semidefinite `P`, by the alternating direction
//! method of multipliers on the split `Ax = s`, `s ∈ [l, u]`.  Equality rows
//! are encoded as `lᵢ = uᵢ`, one-sided rows with an infinite bound.  The
//! iteration runs on Ruiz-equilibrated data with a residual-balancing step
//! parameter, and an active-set polish refines the iterate to near machine
//! precision once the detected active set is correct.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Convex quadratic program `min ½xᵀPx + qᵀx` subject to `l ≤ Ax ≤ u`.
#[derive(Debug, Clone)]
pub struct ConvexQpProblem {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
}

impl ConvexQpProblem {
    /// Validates dimensions, bound ordering and symmetry of `P`.
    ///
    /// `l` may contain `-inf` and `u` may contain `+inf`; `lᵢ = uᵢ` encodes
    /// an equality row.  `P` is symmetrized exactly after the (tolerant)
    /// symmetry check.
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self> {
        let n = q.len();
        let m = l.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::InvalidProblem(format!(
                "quadratic term is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        if a.nrows() != m || a.ncols() != n {
            return Err(Error::InvalidProblem(format!(
                "constraint matrix is {}x{}, expected {m}x{n}",
                a.nrows(),
                a.ncols()
            )));
        }
        if u.len() != m {
            return Err(Error::InvalidProblem(format!(
                "bound vectors disagree: {} lower vs {} upper",
                m,
                u.len()
            )));
        }
        if let Some(v) = p.iter().chain(q.iter()).chain(a.iter()).find(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem(format!("non-finite entry {v} in problem data")));
        }
        for i in 0..m {
            if l[i].is_nan() || u[i].is_nan() {
                return Err(Error::InvalidProblem(format!("NaN bound at row {i}")));
            }
            if l[i] > u[i] {
                return Err(Error::InvalidProblem(format!(
                    "bounds crossed at row {i}: l = {} > u = {}",
                    l[i], u[i]
                )));
            }
            if l[i] == f64::INFINITY || u[i] == f64::NEG_INFINITY {
                return Err(Error::InvalidProblem(format!("row {i} has an empty bound interval")));
            }
        }
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-8 * p.amax().max(1.0) {
            return Err(Error::InvalidProblem(format!(
                "quadratic term not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let p = (&p + p.transpose()) * 0.5;
        Ok(Self { p, q, a, l, u })
    }

    /// Number of variables.
    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Number of constraint rows.
    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn l(&self) -> &DVector<f64> {
        &self.l
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    /// Objective value `½xᵀPx + qᵀx`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Worst constraint violation of `x` over all rows (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        let mut worst = 0.0_f64;
        for i in 0..self.m() {
            if self.l[i].is_finite() {
                worst = worst.max(self.l[i] - ax[i]);
            }
            if self.u[i].is_finite() {
                worst = worst.max(ax[i] - self.u[i]);
            }
        }
        worst
    }
}

/// Engine tuning knobs.
#[derive(Debug, Clone)]
pub struct QpSettings {
    /// Absolute residual tolerance; `Solved` guarantees both residuals meet it.
    pub eps_abs: f64,
    /// Relative residual floor used by the step-parameter adaptation.
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Initial step parameter of the splitting.
    pub rho_init: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Proximal regularization added to the quadratic term.
    pub sigma: f64,
    /// Over-relaxation coefficient, in (0, 2).
    pub alpha: f64,
    /// Residuals, certificates and adaptation are evaluated every this many iterations.
    pub check_interval: usize,
    /// Refine the final iterate by an exact active-set solve.
    pub polish: bool,
    /// Relative tolerance of the infeasibility certificates.
    pub eps_infeasible: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            max_iter: 20_000,
            rho_init: 0.1,
            rho_min: 1e-6,
            rho_max: 1e6,
            sigma: 1e-6,
            alpha: 1.6,
            check_interval: 25,
            polish: true,
            eps_infeasible: 1e-6,
        }
    }
}

impl QpSettings {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.eps_abs > 0.0) {
            return bad("eps_abs must be positive");
        }
        if !(self.eps_rel >= 0.0) {
            return bad("eps_rel must be nonnegative");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.rho_min > 0.0 && self.rho_min <= self.rho_init && self.rho_init <= self.rho_max) {
            return bad("need 0 < rho_min <= rho_init <= rho_max");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return bad("alpha must lie in (0, 2)");
        }
        if self.check_interval == 0 {
            return bad("check_interval must be at least 1");
        }
        if !(self.eps_infeasible > 0.0) {
            return bad("eps_infeasible must be positive");
        }
        Ok(())
    }
}

/// Terminal state of a solve.
///
/// Infeasibility is only reported when a divergence certificate validates;
/// an ambiguous run ends as `MaxIterations`, never as infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
}

/// Result of a solve.  For non-`Solved` statuses the point fields carry the
/// last iterate.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Row duals: `zᵢ ≥ 0` when row `i` is active at its upper bound,
    /// `zᵢ ≤ 0` at its lower bound, free sign on equality rows.
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Whether the returned point came out of the active-set refinement.
    pub polished: bool,
}

/// Diagonal equilibration `x = D x̄`, rows scaled by `E`, cost scaled by `c`.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

const RUIZ_ITERS: usize = 10;
const EQUALITY_RHO_SCALE: f64 = 1e3;
const POLISH_RTOL: f64 = 1e-4;
const POLISH_MIN_GAP: usize = 100;
const POLISH_DELTA: f64 = 1e-8;
const POLISH_REFINE_MAX: usize = 200;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, t| acc.max(t.abs()))
}

fn equilibrate(prob: &ConvexQpProblem) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, Scaling) {
    let n = prob.n();
    let m = prob.m();
    let mut p = prob.p.clone();
    let mut q = prob.q.clone();
    let mut a = prob.a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0_f64;

    let delta_from = |norm: f64| {
        if norm < 1e-12 {
            1.0
        } else {
            1.0 / norm.clamp(1e-8, 1e8).sqrt()
        }
    };

    for _ in 0..RUIZ_ITERS {
        // Column norms of the stacked [P; A] block, row norms of A.
        let mut dx = DVector::from_element(n, 1.0);
        for j in 0..n {
            let mut norm = 0.0_f64;
            for i in 0..n {
                norm = norm.max(p[(i, j)].abs());
            }
            for i in 0..m {
                norm = norm.max(a[(i, j)].abs());
            }
            dx[j] = delta_from(norm);
        }
        let mut de = DVector::from_element(m, 1.0);
        for i in 0..m {
            let mut norm = 0.0_f64;
            for j in 0..n {
                norm = norm.max(a[(i, j)].abs());
            }
            de[i] = delta_from(norm);
        }
        for i in 0..n {
            for j in 0..n {
                p[(i, j)] *= dx[i] * dx[j];
            }
        }
        for j in 0..n {
            q[j] *= dx[j];
        }
        for i in 0..m {
            for j in 0..n {
                a[(i, j)] *= de[i] * dx[j];
            }
        }
        d.component_mul_assign(&dx);
        e.component_mul_assign(&de);

        // Cost normalization.
        let mut mean_col = 0.0_f64;
        for j in 0..n {
            let mut norm = 0.0_f64;
            for i in 0..n {
                norm = norm.max(p[(i, j)].abs());
            }
            mean_col += norm;
        }
        if n > 0 {
            mean_col /= n as f64;
        }
        let gamma = 1.0 / mean_col.max(inf_norm(&q)).max(1.0);
        p *= gamma;
        q *= gamma;
        c *= gamma;
    }

    (p, q, a, Scaling { d, e, c })
}

/// Cholesky factor of `P̄ + σI + Āᵀ diag(ρ) Ā`, retrying with a stiffer
/// regularization if the factorization fails numerically.
fn factor_kkt(
    ps: &DMatrix<f64>,
    as_: &DMatrix<f64>,
    rho: &DVector<f64>,
    sigma: f64,
) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let n = ps.ncols();
    let mut ar = as_.clone();
    for i in 0..ar.nrows() {
        let r = rho[i];
        for j in 0..n {
            ar[(i, j)] *= r;
        }
    }
    let base = ps + as_.transpose() * ar;
    let mut bump = sigma;
    loop {
        let mut m = base.clone();
        for i in 0..n {
            m[(i, i)] += bump;
        }
        let m = (&m + m.transpose()) * 0.5;
        if let Some(ch) = nalgebra::Cholesky::new(m) {
            return ch;
        }
        bump *= 100.0;
    }
}

struct Residuals {
    r_prim: f64,
    r_dual: f64,
    norm_prim: f64,
    norm_dual: f64,
}

/// Unscaled residuals of an iterate: `r_prim = ‖Ax − s‖∞`,
/// `r_dual = ‖Px + q + Aᵀz‖∞`, plus the normalization scales.
fn residuals(prob: &ConvexQpProblem, x: &DVector<f64>, s: &DVector<f64>, z: &DVector<f64>) -> Residuals {
    let ax = &prob.a * x;
    let px = &prob.p * x;
    let atz = prob.a.transpose() * z;
    let r_prim = inf_norm(&(&ax - s));
    let r_dual = inf_norm(&(&px + &prob.q + &atz));
    Residuals {
        r_prim,
        r_dual,
        norm_prim: inf_norm(&ax).max(inf_norm(s)),
        norm_dual: inf_norm(&px).max(inf_norm(&atz)).max(inf_norm(&prob.q)),
    }
}

fn primal_certificate(prob: &ConvexQpProblem, dz: &DVector<f64>, eps: f64) -> bool {
    let norm = inf_norm(dz);
    if norm <= 1e-14 {
        return false;
    }
    if inf_norm(&(prob.a.transpose() * dz)) > eps * norm {
        return false;
    }
    // Support function of the bound box along dz must be negative.
    let mut support = 0.0_f64;
    for i in 0..prob.m() {
        let v = dz[i];
        if v > 0.0 {
            if prob.u[i].is_finite() {
                support += prob.u[i] * v;
            } else if v > eps * norm {
                return false;
            }
        } else if v < 0.0 {
            if prob.l[i].is_finite() {
                support += prob.l[i] * v;
            } else if v < -eps * norm {
                return false;
            }
        }
    }
    support <= -eps * norm
}

fn dual_certificate(prob: &ConvexQpProblem, dx: &DVector<f64>, eps: f64) -> bool {
    let norm = inf_norm(dx);
    if norm <= 1e-14 {
        return false;
    }
    if inf_norm(&(&prob.p * dx)) > eps * norm {
        return false;
    }
    if prob.q.dot(dx) > -eps * norm {
        return false;
    }
    let adx = &prob.a * dx;
    for i in 0..prob.m() {
        let lf = prob.l[i].is_finite();
        let uf = prob.u[i].is_finite();
        let v = adx[i];
        let ok = match (lf, uf) {
            (true, true) => v.abs() <= eps * norm,
            (true, false) => v >= -eps * norm,
            (false, true) => v <= eps * norm,
            (false, false) => true,
        };
        if !ok {
            return false;
        }
    }
    true
}

struct Polished {
    x: DVector<f64>,
    z: DVector<f64>,
    r_prim: f64,
    r_dual: f64,
}

/// Exact solve on the active set read off the dual signs and, for rows
/// whose dual is still silent, the primal slacks — a degenerate corner can
/// hold a row exactly tight while its dual creeps toward sign for
/// thousands of iterations.  Returns `None` when the reduced KKT system
/// cannot be solved or the computed duals contradict their bound side.
fn polish(prob: &ConvexQpProblem, z: &DVector<f64>, x: &DVector<f64>) -> Option<Polished> {
    let n = prob.n();
    let m = prob.m();

    #[derive(Clone, Copy, PartialEq)]
    enum Side {
        Lower,
        Upper,
        Equality,
    }
    let ax = &prob.a * x;
    let mut active: Vec<(usize, Side, f64)> = Vec::new();
    for i in 0..m {
        if prob.u[i] - prob.l[i] < 1e-12 {
            active.push((i, Side::Equality, prob.l[i]));
            continue;
        }
        // A dual pointing at an infinite bound is noise, not activity;
        // fall through to the slack reading instead of aborting.
        if z[i] < -1e-11 && prob.l[i].is_finite() {
            active.push((i, Side::Lower, prob.l[i]));
            continue;
        }
        if z[i] > 1e-11 && prob.u[i].is_finite() {
            active.push((i, Side::Upper, prob.u[i]));
            continue;
        }
        let lo_tight =
            prob.l[i].is_finite() && (ax[i] - prob.l[i]).abs() <= 1e-6 * (1.0 + prob.l[i].abs());
        let hi_tight =
            prob.u[i].is_finite() && (prob.u[i] - ax[i]).abs() <= 1e-6 * (1.0 + prob.u[i].abs());
        match (lo_tight, hi_tight) {
            (true, false) => active.push((i, Side::Lower, prob.l[i])),
            (false, true) => active.push((i, Side::Upper, prob.u[i])),
            (true, true) => {
                // A hair-thin interval: pin the nearer side.
                if (ax[i] - prob.l[i]).abs() <= (prob.u[i] - ax[i]).abs() {
                    active.push((i, Side::Lower, prob.l[i]));
                } else {
                    active.push((i, Side::Upper, prob.u[i]));
                }
            }
            (false, false) => {}
        }
    }
    if active.iter().any(|&(_, _, b)| !b.is_finite()) {
        return None;
    }

    // Two active rows with (anti)parallel normals pin the same hyperplane,
    // make the KKT matrix singular, and split one multiplier between them
    // in an arbitrary — possibly wrong-signed — way.  Keep one row per
    // direction, preferring an equality row because its multiplier is
    // unrestricted in sign and can absorb the whole total.
    {
        let mut kept: Vec<(usize, Side, f64)> = Vec::with_capacity(active.len());
        let mut kept_dirs: Vec<DVector<f64>> = Vec::with_capacity(active.len());
        for &(row, side, b) in &active {
            let norm = prob.a.row(row).norm();
            if norm <= 0.0 {
                continue;
            }
            let dir = prob.a.row(row).transpose() / norm;
            let twin = kept_dirs
                .iter()
                .position(|kd| (&dir - kd).amax() <= 1e-10 || (&dir + kd).amax() <= 1e-10);
            match twin {
                Some(k) => {
                    if side == Side::Equality && kept[k].1 != Side::Equality {
                        kept[k] = (row, side, b);
                        kept_dirs[k] = dir;
                    }
                }
                None => {
                    kept.push((row, side, b));
                    kept_dirs.push(dir);
                }
            }
        }
        active = kept;
    }
    let ma = active.len();

    // Unit-normalize the active rows so that a row with tiny coefficients
    // does not carry a huge multiplier: the δ-regularization error scales
    // with the multiplier, and on near-degenerate corners it would swamp
    // the refinement budget.
    let norms: Vec<f64> = active
        .iter()
        .map(|&(row, _, _)| prob.a.row(row).norm().max(f64::MIN_POSITIVE))
        .collect();

    // Regularized KKT system [P+δI, Ãᵀ; Ã, −δI] over the normalized active
    // rows Ã, refined against the unregularized one.
    let dim = n + ma;
    let mut k = DMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = prob.p[(i, j)];
        }
        k[(i, i)] += POLISH_DELTA;
    }
    for (r, &(row, _, _)) in active.iter().enumerate() {
        for j in 0..n {
            k[(n + r, j)] = prob.a[(row, j)] / norms[r];
            k[(j, n + r)] = prob.a[(row, j)] / norms[r];
        }
        k[(n + r, n + r)] = -POLISH_DELTA;
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -prob.q[j];
    }
    for (r, &(_, _, b)) in active.iter().enumerate() {
        rhs[n + r] = b / norms[r];
    }
    let lu = k.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    // Iterative refinement against the unregularized system; the
    // regularized factorization serves as the preconditioner.  Near-singular
    // active sets contract slowly, so iterate until the residual reaches
    // noise level or stops shrinking.
    let refine_tol = 1e-13 * (1.0 + inf_norm(&rhs));
    let mut prev_rnorm = f64::INFINITY;
    for _ in 0..POLISH_REFINE_MAX {
        // Residual against the unregularized system, computed blockwise.
        let sx = sol.rows(0, n).into_owned();
        let sv = sol.rows(n, ma).into_owned();
        let mut res = DVector::zeros(dim);
        let px = &prob.p * &sx;
        for j in 0..n {
            let mut av = 0.0;
            for (r, &(row, _, _)) in active.iter().enumerate() {
                av += prob.a[(row, j)] / norms[r] * sv[r];
            }
            res[j] = rhs[j] - px[j] - av;
        }
        for (r, &(row, _, _)) in active.iter().enumerate() {
            let mut ax = 0.0;
            for j in 0..n {
                ax += prob.a[(row, j)] / norms[r] * sx[j];
            }
            res[n + r] = rhs[n + r] - ax;
        }
        let rnorm = inf_norm(&res);
        if rnorm <= refine_tol || rnorm >= 0.97 * prev_rnorm {
            break;
        }
        prev_rnorm = rnorm;
        let corr = lu.solve(&res)?;
        sol += corr;
    }

    let x = sol.rows(0, n).into_owned();
    let mut zp = DVector::zeros(m);
    for (r, &(row, side, _)) in active.iter().enumerate() {
        // Undo the row normalization to recover the multiplier of the
        // original constraint.
        let v = sol[n + r] / norms[r];
        match side {
            Side::Upper if v < -1e-9 => return None,
            Side::Lower if v > 1e-9 => return None,
            _ => {}
        }
        zp[row] = v;
    }

    let px = &prob.p * &x;
    let atz = prob.a.transpose() * &zp;
    let r_dual = inf_norm(&(&px + &prob.q + &atz));
    let r_prim = prob.max_violation(&x);
    Some(Polished { x, z: zp, r_prim, r_dual })
}

/// Solves the program with the splitting iteration described in the module
/// docs.  Never reports infeasibility without a validated certificate.
pub fn solve_qp(prob: &ConvexQpProblem, settings: &QpSettings) -> Result<QpSolution> {
    settings.validate()?;
    let n = prob.n();
    let m = prob.m();

    let (ps, qs, as_, scal) = equilibrate(prob);
    let ast = as_.transpose();
    let ls = DVector::from_fn(m, |i, _| scal.e[i] * prob.l[i]);
    let us = DVector::from_fn(m, |i, _| scal.e[i] * prob.u[i]);
    let equality: Vec<bool> = (0..m).map(|i| prob.u[i] - prob.l[i] < 1e-12).collect();

    let rho_vec = |base: f64| {
        DVector::from_fn(m, |i, _| {
            if equality[i] {
                (base * EQUALITY_RHO_SCALE).clamp(settings.rho_min, settings.rho_max * EQUALITY_RHO_SCALE)
            } else {
                base
            }
        })
    };
    let mut rho_base = settings.rho_init;
    let mut rho = rho_vec(rho_base);
    let mut chol = factor_kkt(&ps, &as_, &rho, settings.sigma);

    let mut x = DVector::<f64>::zeros(n);
    let mut slack = DVector::from_fn(m, |i, _| 0.0_f64.clamp(ls[i], us[i]));
    let mut dual = DVector::<f64>::zeros(m);

    // Unscaled snapshots for the divergence certificates.
    let mut x_prev = DVector::<f64>::zeros(n);
    let mut z_prev = DVector::<f64>::zeros(m);
    let mut last_polish: usize = 0;

    let unscale_x = |x: &DVector<f64>| DVector::from_fn(n, |i, _| scal.d[i] * x[i]);
    let unscale_slack = |s: &DVector<f64>| DVector::from_fn(m, |i, _| s[i] / scal.e[i]);
    let unscale_dual = |z: &DVector<f64>| DVector::from_fn(m, |i, _| scal.e[i] * z[i] / scal.c);

    let finish = |x: DVector<f64>,
                  z: DVector<f64>,
                  status: SolveStatus,
                  iterations: usize,
                  r_prim: f64,
                  r_dual: f64,
                  polished: bool| QpSolution {
        objective: prob.objective(&x),
        x,
        z,
        status,
        iterations,
        primal_residual: r_prim,
        dual_residual: r_dual,
        polished,
    };

    let alpha = settings.alpha;
    let sigma = settings.sigma;
    let mut iter = 0;
    while iter < settings.max_iter {
        iter += 1;

        // x-update: (P̄ + σI + Āᵀdiag(ρ)Ā) x̃ = σx − q̄ + Āᵀ(ρ∘s − z)
        let tmp = DVector::from_fn(m, |i, _| rho[i] * slack[i] - dual[i]);
        let rhs = &x * sigma - &qs + &ast * tmp;
        let xt = chol.solve(&rhs);
        let zt = &as_ * &xt;

        // Over-relaxed slack and dual updates with projection onto [l, u].
        x = &xt * alpha + &x * (1.0 - alpha);
        let w = &zt * alpha + &slack * (1.0 - alpha);
        let mut slack_new = DVector::zeros(m);
        for i in 0..m {
            slack_new[i] = (w[i] + dual[i] / rho[i]).clamp(ls[i], us[i]);
        }
        for i in 0..m {
            dual[i] += rho[i] * (w[i] - slack_new[i]);
        }
        slack = slack_new;

        if iter % settings.check_interval != 0 && iter != settings.max_iter {
            continue;
        }

        let xu = unscale_x(&x);
        let su = unscale_slack(&slack);
        let zu = unscale_dual(&dual);
        let res = residuals(prob, &xu, &su, &zu);

        if res.r_prim <= settings.eps_abs && res.r_dual <= settings.eps_abs {
            if settings.polish {
                if let Some(pol) = polish(prob, &zu, &xu) {
                    if pol.r_prim <= settings.eps_abs && pol.r_dual <= settings.eps_abs {
                        return Ok(finish(pol.x, pol.z, SolveStatus::Solved, iter, pol.r_prim, pol.r_dual, true));
                    }
                }
            }
            return Ok(finish(xu, zu, SolveStatus::Solved, iter, res.r_prim, res.r_dual, false));
        }

        let np = res.r_prim / res.norm_prim.max(1e-12);
        let nd = res.r_dual / res.norm_dual.max(1e-12);

        if settings.polish
            && np <= POLISH_RTOL
            && nd <= POLISH_RTOL
            && (last_polish == 0 || iter - last_polish >= POLISH_MIN_GAP)
        {
            last_polish = iter;
            if let Some(pol) = polish(prob, &zu, &xu) {
                if pol.r_prim <= settings.eps_abs && pol.r_dual <= settings.eps_abs {
                    return Ok(finish(pol.x, pol.z, SolveStatus::Solved, iter, pol.r_prim, pol.r_dual, true));
                }
            }
        }

        let dz = &zu - &z_prev;
        if primal_certificate(prob, &dz, settings.eps_infeasible) {
            return Ok(finish(xu, zu, SolveStatus::PrimalInfeasible, iter, res.r_prim, res.r_dual, false));
        }
        let dx = &xu - &x_prev;
        if dual_certificate(prob, &dx, settings.eps_infeasible) {
            return Ok(finish(xu, zu, SolveStatus::DualInfeasible, iter, res.r_prim, res.r_dual, false));
        }
        x_prev = xu;
        z_prev = zu;

        // Residual balancing: only adapt while the residuals sit above the
        // relative floor, to avoid churning near convergence.
        if iter != settings.max_iter
            && (res.r_prim > settings.eps_rel * res.norm_prim || res.r_dual > settings.eps_rel * res.norm_dual)
        {
            let ratio = (np.max(1e-16) / nd.max(1e-16)).sqrt();
            if ratio > 5.0 || ratio < 0.2 {
                let new_base = (rho_base * ratio).clamp(settings.rho_min, settings.rho_max);
                if (new_base - rho_base).abs() > 1e-12 * rho_base {
                    rho_base = new_base;
                    rho = rho_vec(rho_base);
                    chol = factor_kkt(&ps, &as_, &rho, settings.sigma);
                }
            }
        }
    }

    // Out of iterations: one last polish attempt may still rescue the run.
    let xu = unscale_x(&x);
    let su = unscale_slack(&slack);
    let zu = unscale_dual(&dual);
    let res = residuals(prob, &xu, &su, &zu);
    if settings.polish {
        if let Some(pol) = polish(prob, &zu, &xu) {
            if pol.r_prim <= settings.eps_abs && pol.r_dual <= settings.eps_abs {
                return Ok(finish(
                    pol.x,
                    pol.z,
                    SolveStatus::Solved,
                    settings.max_iter,
                    pol.r_prim,
                    pol.r_dual,
                    true,
                ));
            }
        }
    }
    Ok(finish(
        xu,
        zu,
        SolveStatus::MaxIterations,
        settings.max_iter,
        res.r_prim,
        res.r_dual,
        false,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn solve(prob: &ConvexQpProblem) -> QpSolution {
        solve_qp(prob, &QpSettings::default()).unwrap()
    }

    #[test]
    fn scalar_box() {
        // min x² − 2x on [0, 2]: x* = 1, objective −1.
        let prob = ConvexQpProblem::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::from_row_slice(&[-2.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[0.0]),
            DVector::from_row_slice(&[2.0]),
        )
        .unwrap();
        let sol = solve(&prob);
        assert_eq!(sol.status, SolveStatus::Solved);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.objective, -1.0, epsilon = 1e-7);
    }

    #[test]
    fn equality_constrained() {
        // min x₁² + x₂² s.t. x₁ + x₂ = 1: x* = (½, ½), dual z = −1.
        let prob = ConvexQpProblem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_row_slice(&[1.0]),
            DVector::from_row_slice(&[1.0]),
        )
        .unwrap();
        let sol = solve(&prob);
        assert_eq!(sol.status, SolveStatus::Solved);
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.z[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn crossed_bounds_rejected() {
        let err = ConvexQpProblem::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::from_row_slice(&[0.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[2.0]),
            DVector::from_row_slice(&[1.0]),
        );
        assert!(err.is_err());
    }

    #[test]
    fn asymmetric_quadratic_rejected() {
        let err = ConvexQpProblem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        );
        assert!(err.is_err());
    }

    #[test]
    fn contradictory_rows_detected_infeasible() {
        // x ≥ 2 and x ≤ 1 simultaneously.
        let prob = ConvexQpProblem::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::zeros(1),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_row_slice(&[2.0, f64::NEG_INFINITY]),
            DVector::from_row_slice(&[f64::INFINITY, 1.0]),
        )
        .unwrap();
        let sol = solve(&prob);
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    }

    #[test]
    fn unbounded_detected_dual_infeasible() {
        // min −x s.t. x ≥ 0.
        let prob = ConvexQpProblem::new(
            DMatrix::zeros(1, 1),
            DVector::from_row_slice(&[-1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[0.0]),
            DVector::from_row_slice(&[f64::INFINITY]),
        )
        .unwrap();
        let sol = solve(&prob);
        assert_eq!(sol.status, SolveStatus::DualInfeasible);
    }

    #[test]
    fn linear_program_active_at_upper() {
        // min −x s.t. 0 ≤ x ≤ 3: x* = 3 with z ≥ 0 at the upper bound.
        let prob = ConvexQpProblem::new(
            DMatrix::zeros(1, 1),
            DVector::from_row_slice(&[-1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[0.0]),
            DVector::from_row_slice(&[3.0]),
        )
        .unwrap();
        let sol = solve(&prob);
        assert_eq!(sol.status, SolveStatus::Solved);
        assert_abs_diff_eq!(sol.x[0], 3.0, epsilon = 1e-7);
        assert!(sol.z[0] >= -1e-9);
    }

    #[test]
    fn solved_residuals_meet_absolute_tolerance() {
        let prob = ConvexQpProblem::new(
            DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]),
            DVector::from_row_slice(&[1.0, 1.0]),
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
            DVector::from_row_slice(&[1.0, 0.0, 0.0]),
            DVector::from_row_slice(&[1.0, 0.7, 0.7]),
        )
        .unwrap();
        let sol = solve(&prob);
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!(sol.primal_residual <= 1e-8);
        assert!(sol.dual_residual <= 1e-8);
        // Complementary slackness at the returned duals.
        let ax = prob.a() * &sol.x;
        for i in 0..prob.m() {
            let slack = (prob.u()[i] - ax[i]).min(ax[i] - prob.l()[i]);
            assert!((sol.z[i] * slack).abs() <= 1e-6 * (1.0 + sol.z[i].abs()));
        }
    }

    #[test]
    fn unconstrained_problem() {
        // min ½xᵀPx + qᵀx with no rows: x* = −P⁻¹q.
        let prob = ConvexQpProblem::new(
            DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
            DVector::from_row_slice(&[-1.0, 2.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&prob);
        assert_eq!(sol.status, SolveStatus::Solved);
        // P x = −q: [3 1; 1 2] x = [1, −2] → x = (4/5, −7/5).
        assert_abs_diff_eq!(sol.x[0], 0.8, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.x[1], -1.4, epsilon = 1e-7);
    }
}
