//! Artifact IO and command-line front end for `rumid-core`.
//!
//! The `rumid` binary runs the identification loop on files:
//! `simulate` tabulates a model, `check` runs the shape and symmetry tests,
//! `identify` recovers ratios, level functions, utilities and the density,
//! `verify` integrates them back into choice probabilities, and `convert` /
//! `resample` move data between price and offer coordinates.

pub mod artifacts;
pub mod commands;
pub mod formats;
