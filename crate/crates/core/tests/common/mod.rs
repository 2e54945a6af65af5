//! Shared helpers for the integration suites: seeded random programs, an
//! exhaustive active-set reference solver kept independent of the engine
//! under test, and small cardinality-problem builders.
#![allow(dead_code)] // each test binary uses its own subset

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use cardsca::qp::ConvexQpProblem;
use cardsca::sca::CardinalityProblem;

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, t| acc.max(t.abs()))
}

/// `min Σ dᵢxᵢ²` over the unit simplex, rows: budget equality then one box
/// row `0 ≤ xᵢ ≤ 1` per variable.
pub fn diag_simplex_base(diag: &[f64]) -> ConvexQpProblem {
    let n = diag.len();
    let p = DMatrix::from_diagonal(&DVector::from_row_slice(diag)) * 2.0;
    let m = 1 + n;
    let mut a = DMatrix::zeros(m, n);
    for j in 0..n {
        a[(0, j)] = 1.0;
        a[(1 + j, j)] = 1.0;
    }
    let mut l = DVector::zeros(m);
    let u = DVector::from_element(m, 1.0);
    l[0] = 1.0;
    ConvexQpProblem::new(p, DVector::zeros(n), a, l, u).expect("simplex base is well-formed")
}

pub fn diag_simplex_card(diag: &[f64], k: usize) -> CardinalityProblem {
    CardinalityProblem::new(diag_simplex_base(diag), k).expect("valid budget")
}

pub fn simplex_card(n: usize, k: usize) -> CardinalityProblem {
    diag_simplex_card(&vec![1.0; n], k)
}

/// Random feasible, bounded program with strictly convex quadratic term:
/// up to 8 variables and 6 rows mixing equality, one-sided and two-sided
/// bounds placed around a known interior point.
pub fn random_qp(seed: u64) -> ConvexQpProblem {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8usize);
    let m = rng.random_range(1..=6usize);

    let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut p = &f * f.transpose();
    for i in 0..n {
        p[(i, i)] += rng.random_range(0.1..1.0);
    }
    let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let ax0 = &a * &x0;

    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for i in 0..m {
        let t = ax0[i];
        match rng.random_range(0..4u8) {
            0 => {
                l[i] = t;
                u[i] = t;
            }
            1 => {
                l[i] = t - rng.random_range(0.0..1.5);
                u[i] = f64::INFINITY;
            }
            2 => {
                l[i] = f64::NEG_INFINITY;
                u[i] = t + rng.random_range(0.0..1.5);
            }
            _ => {
                l[i] = t - rng.random_range(0.0..1.0);
                u[i] = t + rng.random_range(0.0..1.0);
            }
        }
    }
    ConvexQpProblem::new(p, q, a, l, u).expect("generated program must be well-formed")
}

/// Global optimum by brute force: enumerate every assignment of rows to
/// {inactive, at lower, at upper}, solve the equality-constrained system of
/// each assignment, and keep the best candidate feasible for the full
/// program.  Exact for strictly convex quadratics at these sizes.
pub fn active_set_optimum(prob: &ConvexQpProblem) -> Option<(DVector<f64>, f64)> {
    let m = prob.m();
    // Admissible states per row: 0 inactive, 1 at lower, 2 at upper.
    let mut states: Vec<Vec<u8>> = Vec::with_capacity(m);
    for i in 0..m {
        if prob.u()[i] - prob.l()[i] < 1e-12 {
            states.push(vec![1]);
        } else {
            let mut s = vec![0u8];
            if prob.l()[i].is_finite() {
                s.push(1);
            }
            if prob.u()[i].is_finite() {
                s.push(2);
            }
            states.push(s);
        }
    }

    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut counter = vec![0usize; m];
    loop {
        let active: Vec<(usize, f64)> = (0..m)
            .filter_map(|i| match states[i][counter[i]] {
                0 => None,
                1 => Some((i, prob.l()[i])),
                _ => Some((i, prob.u()[i])),
            })
            .collect();
        if let Some(x) = equality_solve(prob, &active) {
            if prob.max_violation(&x) <= 1e-9 {
                let obj = prob.objective(&x);
                if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                    best = Some((x, obj));
                }
            }
        }
        // Mixed-radix increment over the per-row state lists.
        let mut pos = 0;
        loop {
            if pos == m {
                return best;
            }
            counter[pos] += 1;
            if counter[pos] < states[pos].len() {
                break;
            }
            counter[pos] = 0;
            pos += 1;
        }
    }
}

/// Stationary point with the given rows pinned to their bounds:
/// `[P Aᵃᵀ; Aᵃ 0][x; ν] = [−q; b]`.  `None` when the system is singular or
/// the computed solution fails to satisfy it accurately.
fn equality_solve(prob: &ConvexQpProblem, active: &[(usize, f64)]) -> Option<DVector<f64>> {
    let n = prob.n();
    let ma = active.len();
    let dim = n + ma;
    let mut k = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = prob.p()[(i, j)];
        }
        rhs[i] = -prob.q()[i];
    }
    for (r, &(row, b)) in active.iter().enumerate() {
        for j in 0..n {
            k[(n + r, j)] = prob.a()[(row, j)];
            k[(j, n + r)] = prob.a()[(row, j)];
        }
        rhs[n + r] = b;
    }
    let sol = k.clone().full_piv_lu().solve(&rhs)?;
    let resid = inf_norm(&(&k * &sol - &rhs));
    if resid > 1e-8 * (1.0 + inf_norm(&rhs)) {
        return None;
    }
    Some(sol.rows(0, n).into_owned())
}
