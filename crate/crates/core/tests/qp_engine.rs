//! Engine results against exhaustive active-set enumeration, plus
//! optimality and scaling properties on generated programs.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use cardsca::qp::{solve_qp, ConvexQpProblem, QpSettings, SolveStatus};

/// KKT residual blocks of a returned solution: stationarity, feasibility,
/// and complementary slackness.
fn kkt_residual(prob: &ConvexQpProblem, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let stat = common::inf_norm(&(prob.p() * x + prob.q() + prob.a().transpose() * z));
    let feas = prob.max_violation(x);
    let ax = prob.a() * x;
    let mut compl = 0.0_f64;
    for i in 0..prob.m() {
        let below = if prob.l()[i].is_finite() { ax[i] - prob.l()[i] } else { f64::INFINITY };
        let above = if prob.u()[i].is_finite() { prob.u()[i] - ax[i] } else { f64::INFINITY };
        let slack = below.min(above);
        if slack.is_finite() {
            compl = compl.max((z[i] * slack).abs() / (1.0 + z[i].abs()));
        } else {
            compl = compl.max(z[i].abs());
        }
    }
    stat.max(feas).max(compl)
}

#[test]
fn matches_active_set_enumeration() {
    for seed in 0..100u64 {
        let prob = common::random_qp(seed);
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved, "seed {seed} did not solve");
        let (x_ref, obj_ref) =
            common::active_set_optimum(&prob).expect("reference enumeration found no candidate");
        assert!(
            (sol.objective - obj_ref).abs() <= 1e-6,
            "seed {seed}: objective {:.12} vs reference {:.12}",
            sol.objective,
            obj_ref
        );
        assert!(
            common::inf_norm(&(&sol.x - &x_ref)) <= 1e-5,
            "seed {seed}: solution point drifted from reference"
        );
        assert!(
            kkt_residual(&prob, &sol.x, &sol.z) <= 1e-6,
            "seed {seed}: KKT residual too large"
        );
    }
}

#[test]
fn dual_signs_follow_bound_sides() {
    for seed in 0..100u64 {
        let prob = common::random_qp(seed);
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        let ax = prob.a() * &sol.x;
        for i in 0..prob.m() {
            if prob.u()[i] - prob.l()[i] < 1e-12 {
                continue; // equality rows carry free-signed duals
            }
            if sol.z[i] > 1e-9 {
                assert!(
                    (ax[i] - prob.u()[i]).abs() <= 1e-6,
                    "seed {seed} row {i}: positive dual off the upper bound"
                );
            }
            if sol.z[i] < -1e-9 {
                assert!(
                    (ax[i] - prob.l()[i]).abs() <= 1e-6,
                    "seed {seed} row {i}: negative dual off the lower bound"
                );
            }
        }
    }
}

/// Box-constrained program used by the sampled-dominance property.
fn boxed_qp(seed: u64) -> (ConvexQpProblem, DVector<f64>, DVector<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8usize);
    let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut p = &f * f.transpose();
    for i in 0..n {
        p[(i, i)] += rng.random_range(0.1..1.0);
    }
    let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let l = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
    let u = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
    let prob = ConvexQpProblem::new(p, q, DMatrix::identity(n, n), l.clone(), u.clone()).unwrap();
    (prob, l, u)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_sampled_feasible_point_beats_the_solution(
        seed in 0u64..1000,
        t in proptest::collection::vec(0.0f64..1.0, 8),
    ) {
        let (prob, l, u) = boxed_qp(seed);
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Solved);
        let sample = DVector::from_fn(prob.n(), |i, _| l[i] + t[i] * (u[i] - l[i]));
        prop_assert!(sol.objective <= prob.objective(&sample) + 1e-8);
    }

    #[test]
    fn cost_scaling_leaves_argmin_unchanged(seed in 0u64..1000, s in 1e-3f64..1e3) {
        let prob = common::random_qp(seed);
        let scaled = ConvexQpProblem::new(
            prob.p() * s,
            prob.q() * s,
            prob.a().clone(),
            prob.l().clone(),
            prob.u().clone(),
        ).unwrap();
        let sol = solve_qp(&prob, &QpSettings::default()).unwrap();
        let sol_s = solve_qp(&scaled, &QpSettings::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Solved);
        prop_assert_eq!(sol_s.status, SolveStatus::Solved);
        prop_assert!(
            common::inf_norm(&(&sol.x - &sol_s.x)) <= 1e-6,
            "argmin moved under cost scaling by {}",
            common::inf_norm(&(&sol.x - &sol_s.x))
        );
    }
}
