//! Mean-variance benchmark instances: seeded generation, the mapping onto
//! a [`CardinalityProblem`], and a line-oriented text format with bit-exact
//! round-trips.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::qp::ConvexQpProblem;
use crate::sca::CardinalityProblem;

/// A minimum-variance portfolio selection instance:
/// `min xᵀΣx` subject to `νᵀx ≥ ρ`, `Σxᵢ = 1`, `0 ≤ xᵢ ≤ uᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvInstance {
    /// Symmetric positive semidefinite covariance.
    pub covariance: DMatrix<f64>,
    /// Expected per-asset returns `ν`.
    pub mean_returns: DVector<f64>,
    /// Return floor `ρ`.
    pub min_return: f64,
    /// Per-asset holding caps `u`.
    pub caps: DVector<f64>,
    /// Generator seed, absent on hand-written instances.
    pub seed: Option<u64>,
    /// Diagonal-dominance knob used at generation, absent on hand-written
    /// instances.
    pub diag_dominance: Option<f64>,
}

impl MvInstance {
    /// Validates shapes, exact symmetry, positivity of the floor and caps,
    /// and that the caps can hold the unit budget at all.
    pub fn new(
        covariance: DMatrix<f64>,
        mean_returns: DVector<f64>,
        min_return: f64,
        caps: DVector<f64>,
        seed: Option<u64>,
        diag_dominance: Option<f64>,
    ) -> Result<Self> {
        let n = mean_returns.len();
        if n < 2 {
            return Err(Error::InvalidProblem(format!("need at least 2 assets, got {n}")));
        }
        if covariance.nrows() != n || covariance.ncols() != n || caps.len() != n {
            return Err(Error::InvalidProblem(format!(
                "shape mismatch: covariance {}×{}, returns {n}, caps {}",
                covariance.nrows(),
                covariance.ncols(),
                caps.len()
            )));
        }
        if covariance.iter().any(|v| !v.is_finite())
            || mean_returns.iter().any(|v| !v.is_finite())
            || caps.iter().any(|v| !v.is_finite())
            || !min_return.is_finite()
        {
            return Err(Error::InvalidProblem("non-finite instance data".into()));
        }
        if covariance != covariance.transpose() {
            return Err(Error::InvalidProblem("covariance must be exactly symmetric".into()));
        }
        if !(min_return > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "return floor must be positive, got {min_return}"
            )));
        }
        if caps.iter().any(|&u| !(u > 0.0 && u <= 1.0)) {
            return Err(Error::InvalidProblem("caps must lie in (0, 1]".into()));
        }
        if caps.sum() < 1.0 {
            return Err(Error::InvalidProblem(format!(
                "caps sum to {:.3}, cannot hold the unit budget",
                caps.sum()
            )));
        }
        Ok(Self { covariance, mean_returns, min_return, caps, seed, diag_dominance })
    }

    pub fn n(&self) -> usize {
        self.mean_returns.len()
    }
}

/// Assets in descending-return order, greedily filled to their caps until
/// the unit budget is spent; the prefix actually used.  With caps below
/// `0.5` this needs at least three assets, so it doubles as the canonical
/// sparse feasible support.
pub fn greedy_return_support(instance: &MvInstance) -> Vec<usize> {
    let mut order: Vec<usize> = (0..instance.n()).collect();
    order.sort_by(|&a, &b| {
        instance.mean_returns[b]
            .partial_cmp(&instance.mean_returns[a])
            .expect("finite returns")
            .then(a.cmp(&b))
    });
    let mut budget = 1.0_f64;
    let mut used = Vec::new();
    for i in order {
        if budget <= 0.0 {
            break;
        }
        used.push(i);
        budget -= instance.caps[i];
    }
    used.sort_unstable();
    used
}

/// Best return attainable by the greedy fill — the exact maximum of `νᵀx`
/// over the budget and cap rows (the LP optimum is the greedy solution).
fn greedy_max_return(instance: &MvInstance) -> f64 {
    let mut order: Vec<usize> = (0..instance.n()).collect();
    order.sort_by(|&a, &b| {
        instance.mean_returns[b]
            .partial_cmp(&instance.mean_returns[a])
            .expect("finite returns")
            .then(a.cmp(&b))
    });
    let mut budget = 1.0_f64;
    let mut value = 0.0;
    for i in order {
        if budget <= 0.0 {
            break;
        }
        let take = budget.min(instance.caps[i]);
        value += take * instance.mean_returns[i];
        budget -= take;
    }
    value
}

/// Generates a seeded mean-variance instance.
///
/// Deterministic in `(n, seed, diag_dominance)`; all draws come from one
/// `ChaCha12` stream in a fixed order: the `n×⌈n/5⌉` factor matrix `F`
/// row-major in `U[−1,1]`, then the diagonal lift `dᵢ ~ U[0, dominance·rᵢ]`
/// with `rᵢ` the absolute row sum of `FFᵀ`, then returns `νᵢ ~ U[0, 0.01]`,
/// caps `uᵢ ~ U[0.375, 0.425]`, and the floor `ρ ~ U[0.002, 0.01]` redrawn
/// until the greedy-attainable return covers it (returns are redrawn too if
/// the floor cannot be covered after many tries).  The covariance is
/// `FFᵀ + diag(d)`, exactly symmetrized.
///
/// `k_hint` is the budget the instance is meant to be solved under; with
/// caps below `0.5` the greedy fill spends the budget on at most three
/// assets, so any `k_hint ≥ 3` keeps the budgeted problem feasible.
pub fn generate_mv(n: usize, k_hint: usize, seed: u64, diag_dominance: f64) -> Result<MvInstance> {
    if n < 3 {
        return Err(Error::Generation(format!(
            "caps drawn below 0.425 cannot hold the unit budget with {n} assets; need n ≥ 3"
        )));
    }
    if k_hint < 3 {
        return Err(Error::Generation(format!(
            "a budget of {k_hint} assets with caps below 0.425 cannot hold the unit budget; \
             need k_hint ≥ 3"
        )));
    }
    if !(diag_dominance >= 0.0) {
        return Err(Error::Generation(format!(
            "diagonal dominance must be nonnegative, got {diag_dominance}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let factors = n.div_ceil(5);
    let f = DMatrix::from_fn(n, factors, |_, _| rng.random_range(-1.0..1.0));
    let ff = &f * f.transpose();
    let ff = (&ff + ff.transpose()) * 0.5;
    let mut covariance = ff.clone();
    for i in 0..n {
        let row_scale: f64 = ff.row(i).iter().map(|v: &f64| v.abs()).sum();
        covariance[(i, i)] += rng.random_range(0.0..=(diag_dominance * row_scale).max(f64::MIN_POSITIVE));
    }

    // Returns, caps, floor — the floor must be attainable under the caps.
    const FLOOR_TRIES: usize = 64;
    const RETURN_TRIES: usize = 64;
    for _ in 0..RETURN_TRIES {
        let mean_returns = DVector::from_fn(n, |_, _| rng.random_range(0.0..0.01));
        let caps = DVector::from_fn(n, |_, _| rng.random_range(0.375..0.425));
        let probe = MvInstance {
            covariance: covariance.clone(),
            mean_returns,
            min_return: f64::MIN_POSITIVE,
            caps,
            seed: Some(seed),
            diag_dominance: Some(diag_dominance),
        };
        let attainable = greedy_max_return(&probe);
        for _ in 0..FLOOR_TRIES {
            let rho = rng.random_range(0.002..0.01);
            if rho <= attainable {
                return MvInstance::new(
                    probe.covariance,
                    probe.mean_returns,
                    rho,
                    probe.caps,
                    probe.seed,
                    probe.diag_dominance,
                );
            }
        }
    }
    Err(Error::Generation(format!(
        "could not draw an attainable return floor for n={n} seed={seed} after \
         {RETURN_TRIES}×{FLOOR_TRIES} tries"
    )))
}

/// The cardinality-free part of an instance: objective `xᵀΣx` (engine
/// quadratic term `2Σ`), rows ordered return floor / unit budget / one cap
/// box per asset.
pub fn base_problem(instance: &MvInstance) -> Result<ConvexQpProblem> {
    let n = instance.n();
    let p = &instance.covariance * 2.0;
    let q = DVector::zeros(n);
    let m = 2 + n;
    let mut a = DMatrix::zeros(m, n);
    for j in 0..n {
        a[(0, j)] = instance.mean_returns[j];
        a[(1, j)] = 1.0;
        a[(2 + j, j)] = 1.0;
    }
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    l[0] = instance.min_return;
    u[0] = f64::INFINITY;
    l[1] = 1.0;
    u[1] = 1.0;
    for i in 0..n {
        u[2 + i] = instance.caps[i];
    }
    ConvexQpProblem::new(p, q, a, l, u)
}

/// Maps an instance onto the budgeted problem over [`base_problem`]'s rows.
pub fn to_problem(instance: &MvInstance, k: usize) -> Result<CardinalityProblem> {
    CardinalityProblem::new(base_problem(instance)?, k)
}

/// Writes the line-oriented text form:
///
/// ```text
/// mvqp 1
/// <n>
/// <rho>
/// <n return values>
/// <n cap values>
/// <n covariance rows, n values each>
/// meta <seed> <dominance>        (only on generated instances)
/// ```
///
/// Floats carry 17 significant digits, enough for bit-exact round-trips.
pub fn write_instance(instance: &MvInstance, path: &Path) -> Result<()> {
    fs::write(path, render_instance(instance))?;
    Ok(())
}

/// Renders the text form written by [`write_instance`].
pub fn render_instance(instance: &MvInstance) -> String {
    let n = instance.n();
    let mut out = String::new();
    out.push_str("mvqp 1\n");
    let _ = writeln!(out, "{n}");
    let _ = writeln!(out, "{:.16e}", instance.min_return);
    for (label, v) in [("returns", &instance.mean_returns), ("caps", &instance.caps)] {
        let _ = label;
        let line: Vec<String> = v.iter().map(|t| format!("{t:.16e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    for i in 0..n {
        let line: Vec<String> =
            (0..n).map(|j| format!("{:.16e}", instance.covariance[(i, j)])).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    if let (Some(seed), Some(dom)) = (instance.seed, instance.diag_dominance) {
        let _ = writeln!(out, "meta {seed} {dom:.16e}");
    }
    out
}

/// Reads the text form back; errors carry the 1-based line number.
pub fn read_instance(path: &Path) -> Result<MvInstance> {
    parse_instance(&fs::read_to_string(path)?)
}

/// Parses the text form; errors carry the 1-based line number.
pub fn parse_instance(text: &str) -> Result<MvInstance> {
    let mut lines = text.lines().enumerate();
    let mut next_line = |what: &str| -> Result<(usize, &str)> {
        lines
            .next()
            .map(|(i, s)| (i + 1, s))
            .ok_or_else(|| Error::Parse { line: 0, message: format!("missing {what}") })
    };

    let (line_no, header) = next_line("header")?;
    if header.trim() != "mvqp 1" {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected header `mvqp 1`, found `{header}`"),
        });
    }
    let (line_no, n_text) = next_line("asset count")?;
    let n: usize = n_text.trim().parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("asset count is not an integer: `{n_text}`"),
    })?;
    let (line_no, rho_text) = next_line("return floor")?;
    let min_return = parse_float(rho_text.trim(), line_no, "return floor")?;

    let (line_no, returns_text) = next_line("returns line")?;
    let mean_returns = DVector::from_vec(parse_floats(returns_text, n, line_no, "returns")?);
    let (line_no, caps_text) = next_line("caps line")?;
    let caps = DVector::from_vec(parse_floats(caps_text, n, line_no, "caps")?);

    let mut covariance = DMatrix::zeros(n, n);
    for i in 0..n {
        let (line_no, row_text) = next_line(&format!("covariance row {i}"))?;
        let row = parse_floats(row_text, n, line_no, &format!("covariance row {i}"))?;
        for (j, v) in row.into_iter().enumerate() {
            covariance[(i, j)] = v;
        }
    }

    let mut seed = None;
    let mut diag_dominance = None;
    for (i, line) in lines {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        if parts.next() != Some("meta") {
            return Err(Error::Parse {
                line: line_no,
                message: format!("unexpected trailing line `{trimmed}`"),
            });
        }
        let seed_text = parts.next().ok_or_else(|| Error::Parse {
            line: line_no,
            message: "meta line is missing the seed".into(),
        })?;
        seed = Some(seed_text.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("meta seed is not an integer: `{seed_text}`"),
        })?);
        let dom_text = parts.next().ok_or_else(|| Error::Parse {
            line: line_no,
            message: "meta line is missing the dominance value".into(),
        })?;
        diag_dominance = Some(parse_float(dom_text, line_no, "meta dominance")?);
    }

    MvInstance::new(covariance, mean_returns, min_return, caps, seed, diag_dominance)
}

fn parse_float(token: &str, line: usize, what: &str) -> Result<f64> {
    token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} is not a number: `{token}`"),
    })
}

fn parse_floats(text: &str, expect: usize, line: usize, what: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|tok| parse_float(tok, line, what))
        .collect::<Result<_>>()?;
    if values.len() != expect {
        return Err(Error::Parse {
            line,
            message: format!("{what} has {} values, expected {expect}", values.len()),
        });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{restricted_solve, RestrictedOutcome};
    use crate::qp::{solve_qp, QpSettings, SolveStatus};
    use crate::sparsity::SupportSet;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy_instance() -> MvInstance {
        MvInstance::new(
            DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.2]),
            DVector::from_row_slice(&[0.005, 0.008]),
            0.004,
            DVector::from_row_slice(&[0.6, 0.5]),
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_mv(12, 4, 41, 1.0).unwrap();
        let b = generate_mv(12, 4, 41, 1.0).unwrap();
        assert_eq!(a, b);
        let c = generate_mv(12, 4, 42, 1.0).unwrap();
        assert_ne!(a.covariance, c.covariance);
    }

    #[test]
    fn generated_fields_stay_in_their_ranges() {
        for seed in 0..10u64 {
            let inst = generate_mv(10, 3, seed, 0.5).unwrap();
            assert!(inst.caps.iter().all(|&u| (0.375..0.425).contains(&u)));
            assert!(inst.mean_returns.iter().all(|&v| (0.0..0.01).contains(&v)));
            assert!((0.002..0.01).contains(&inst.min_return));
            assert_eq!(inst.covariance, inst.covariance.transpose());
            assert_eq!(inst.seed, Some(seed));
        }
    }

    #[test]
    fn generated_covariance_is_positive_semidefinite() {
        for (seed, dom) in [(3u64, 0.0), (7, 0.5), (11, 2.0)] {
            let inst = generate_mv(10, 3, seed, dom).unwrap();
            let eigen = inst.covariance.clone().symmetric_eigenvalues();
            let min = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-10, "seed {seed}: min eigenvalue {min}");
        }
    }

    #[test]
    fn generation_rejects_impossible_shapes() {
        assert!(matches!(generate_mv(2, 3, 1, 1.0), Err(Error::Generation(_))));
        assert!(matches!(generate_mv(10, 2, 1, 1.0), Err(Error::Generation(_))));
        assert!(matches!(generate_mv(10, 3, 1, -0.5), Err(Error::Generation(_))));
    }

    #[test]
    fn greedy_support_spends_the_budget_and_is_feasible() {
        let inst = generate_mv(10, 4, 5, 1.0).unwrap();
        let support = greedy_return_support(&inst);
        // Caps below 0.425 need ≥ 3 assets; ≥ 0.375 means 3 always suffice.
        assert_eq!(support.len(), 3);
        let problem = to_problem(&inst, 4).unwrap();
        let support = SupportSet::new(support, inst.n()).unwrap();
        let out = restricted_solve(problem.base(), &support, &QpSettings::default()).unwrap();
        assert!(matches!(out, RestrictedOutcome::Optimal { .. }));
    }

    #[test]
    fn problem_rows_carry_the_instance_data() {
        let inst = toy_instance();
        let problem = to_problem(&inst, 1).unwrap();
        let base = problem.base();
        assert_eq!(base.m(), 4);
        assert_eq!(base.p().clone(), inst.covariance * 2.0);
        for j in 0..2 {
            assert_eq!(base.a()[(0, j)], inst.mean_returns[j]);
            assert_eq!(base.a()[(1, j)], 1.0);
            assert_eq!(base.a()[(2 + j, j)], 1.0);
            assert_eq!(base.u()[2 + j], inst.caps[j]);
            assert_eq!(base.l()[2 + j], 0.0);
        }
        assert_eq!(base.l()[0], inst.min_return);
        assert!(base.u()[0].is_infinite());
        assert_eq!((base.l()[1], base.u()[1]), (1.0, 1.0));
    }

    #[test]
    fn symmetric_toy_spreads_evenly_at_the_relaxation() {
        let inst = MvInstance::new(
            DMatrix::identity(3, 3) * 0.1,
            DVector::from_element(3, 0.006),
            0.003,
            DVector::from_element(3, 0.5),
            None,
            None,
        )
        .unwrap();
        let problem = to_problem(&inst, 2).unwrap();
        let sol = solve_qp(problem.base(), &QpSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        for i in 0..3 {
            assert_abs_diff_eq!(sol.x[i], 1.0 / 3.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instance.mvqp");
        let inst = generate_mv(20, 5, 123, 1.5).unwrap();
        write_instance(&inst, &path).unwrap();
        let back = read_instance(&path).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn hand_written_file_parses() {
        let text = "mvqp 1\n2\n4e-3\n5e-3 8e-3\n0.6 0.5\n0.1 0.02\n0.02 0.2\n";
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst, toy_instance());
        assert_eq!(inst.seed, None);
    }

    #[test]
    fn truncated_and_malformed_files_error_with_line_numbers() {
        let whole = "mvqp 1\n2\n4e-3\n5e-3 8e-3\n0.6 0.5\n0.1 0.02\n0.02 0.2\n";
        // Drop the last covariance row.
        let truncated: String =
            whole.lines().take(6).map(|l| format!("{l}\n")).collect();
        match parse_instance(&truncated) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("covariance row 1")),
            other => panic!("expected a parse error, got {other:?}"),
        }
        // Corrupt one token.
        let bad = whole.replace("0.02 0.2", "0.02 zebra");
        match parse_instance(&bad) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("zebra"));
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
        // Wrong count on the caps line.
        let short = whole.replace("0.6 0.5", "0.6");
        match parse_instance(&short) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("expected 2"));
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn random_instances_round_trip(
            n in 3usize..9,
            seed in proptest::num::u64::ANY,
            dom in 0.0..2.0f64,
        ) {
            let inst = generate_mv(n, 3, seed, dom).unwrap();
            let text = render_instance(&inst);
            let back = parse_instance(&text).unwrap();
            prop_assert_eq!(inst, back);
        }
    }
}
