//! Numerical laboratory for the one-dimensional parabolic obstacle problem
//! with variable coefficients.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod classifier;
pub mod closed_forms;
pub mod coefficients;
pub mod energetics;
pub mod expr;
pub mod finance;
pub mod free_boundary;
pub mod grid;
pub mod lcp;
pub mod ode;
pub mod profile;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
