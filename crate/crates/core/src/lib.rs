//! Numerical checks for central limit theorems of additive functionals of
//! finite-state ergodic Markov processes.
//!
//! The pipeline runs from a generator `Q` to its split `G = -S + A` in
//! `L^2(pi)`, the resolvent sweep `u_lambda = (lambda - G)^{-1} f` behind the
//! Kipnis-Varadhan conditions, the strong / graded / relaxed sector
//! conditions, and a Monte Carlo cross-check of the asymptotic variance.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builtin;
mod error;
pub mod linalg;
pub mod markov_core;
pub mod mc_verify;
mod par;
pub mod sector_conditions;
pub mod spectral_ops;

pub use error::{Error, Result};
pub use markov_core::{GeneratorModel, Observable, OperatorSplit, Tolerances};
pub use spectral_ops::{SpectralData, SweepConfig};
