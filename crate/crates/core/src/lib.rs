//! Cardinality-constrained convex optimization.
//!
//! The central problem is
//!
//! ```text
//!     minimize   f(x)
//!     subject to g(x) ≤ 0,   ‖x‖₀ ≤ K,   x ≥ 0
//! ```
//!
//! with convex `f` and `g`, attacked through an exact continuous
//! reformulation: `‖x‖₀ ≤ K` is replaced by the bilinear selection system
//! `eᵀx − xᵀy ≤ 0`, `Σᵢ yᵢ ≤ K`, `0 ≤ y ≤ 1`, which is then solved by
//! successive convex approximation with an increasing penalty on the
//! linearized selection gap.
//!
//! The crate ships its own dense QP engine ([`qp`]), the selection-system
//! helpers ([`sparsity`]), the penalized solver ([`sca`]), reweighted-ℓ1
//! surrogate baselines ([`baselines`]), small exhaustive verification
//! oracles ([`oracle`]), and seeded mean-variance instance generation with
//! a text interchange format ([`instances`]).

pub mod baselines;
mod error;
#[cfg(test)]
mod fixtures;
pub mod instances;
pub mod oracle;
pub mod qp;
pub mod sca;
pub mod sparsity;

pub use error::{Error, Result};
