//! Shared problem builders for unit tests.

use nalgebra::{DMatrix, DVector};

use crate::qp::ConvexQpProblem;
use crate::sca::CardinalityProblem;

/// `min xᵀx` over the unit simplex with a uniform per-coordinate cap.
/// Rows: one budget equality, then one box row per variable.
pub fn capped_simplex_base(n: usize, cap: f64) -> ConvexQpProblem {
    let caps = vec![cap; n];
    simplex_base_with_caps(&caps)
}

/// `min xᵀx` over the unit simplex with per-coordinate caps.
pub fn simplex_base_with_caps(caps: &[f64]) -> ConvexQpProblem {
    let n = caps.len();
    let p = DMatrix::identity(n, n) * 2.0;
    let q = DVector::zeros(n);
    let m = 1 + n;
    let mut a = DMatrix::zeros(m, n);
    for j in 0..n {
        a[(0, j)] = 1.0;
        a[(1 + j, j)] = 1.0;
    }
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    l[0] = 1.0;
    u[0] = 1.0;
    for i in 0..n {
        u[1 + i] = caps[i];
    }
    ConvexQpProblem::new(p, q, a, l, u).unwrap()
}

/// `min Σ dᵢxᵢ²` over the unit simplex (unit caps).
pub fn diag_simplex_base(diag: &[f64]) -> ConvexQpProblem {
    let n = diag.len();
    let p = DMatrix::from_diagonal(&DVector::from_row_slice(diag)) * 2.0;
    let q = DVector::zeros(n);
    let m = 1 + n;
    let mut a = DMatrix::zeros(m, n);
    for j in 0..n {
        a[(0, j)] = 1.0;
        a[(1 + j, j)] = 1.0;
    }
    let mut l = DVector::zeros(m);
    let u = DVector::from_element(m, 1.0);
    l[0] = 1.0;
    ConvexQpProblem::new(p, q, a, l, u).unwrap()
}

/// The capped simplex with unit caps, under a cardinality budget.
pub fn simplex_card(n: usize, k: usize) -> CardinalityProblem {
    CardinalityProblem::new(capped_simplex_base(n, 1.0), k).unwrap()
}

/// The capped simplex with a uniform cap, under a cardinality budget.
pub fn capped_simplex_card(n: usize, k: usize, cap: f64) -> CardinalityProblem {
    CardinalityProblem::new(capped_simplex_base(n, cap), k).unwrap()
}

/// The capped simplex with per-coordinate caps, under a cardinality budget.
pub fn simplex_with_caps(caps: &[f64], k: usize) -> CardinalityProblem {
    CardinalityProblem::new(simplex_base_with_caps(caps), k).unwrap()
}
