//! Rationalizability tests and constructive recovery for multinomial random
//! utility models with income effects.
//!
//! Choice probabilities `q_j(a)` are indexed by the numeraire left over after
//! buying each alternative, `a_j = y - p_j` (alternative 0 is the outside
//! option, `a_0 = y`). The crate covers the whole loop:
//!
//! * [`model`] generates ground-truth fields from additive random utility
//!   models (closed-form logit or seeded Monte Carlo).
//! * [`field`] stores tabulated probabilities on uniform grids with
//!   multilinear interpolation, finite-difference derivatives and shape checks.
//! * [`symmetry`] tests Daly-Zachary symmetry and the income-effect
//!   counterpart (pairwise ratios depend only on their own coordinates), and
//!   fits the ratio functions by sieve least squares.
//! * [`characteristics`] integrates the characteristic ODEs, builds the level
//!   functions `omega_j` and inverts them into utilities `w_j`.
//! * [`density`] reconstructs the heterogeneity CDF and density.
//! * [`verify`] integrates the recovered model back into choice probabilities
//!   and runs the translation-invariance (no income effect) test.
//! * [`pipeline`] wires the pieces together.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod characteristics;
pub mod density;
pub mod error;
pub mod field;
pub mod model;
pub mod ode;
pub mod pipeline;
pub mod root;
pub mod sample;
pub mod symmetry;
pub mod verify;

#[cfg(test)]
pub(crate) mod fixtures;

pub use error::{Error, Result};
