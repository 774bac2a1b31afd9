//! Simulation and verification tools for Robbins-Monro iterations with
//! Ruppert-Polyak averaging that converge to a manifold of critical points.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedules`]: step sizes, averaging weights, burn-in and the parameter
//!   feasibility conditions of the averaged CLT.
//! - [`geometry`]: built-in test problems with exact derivatives, closest-point
//!   projection, charts adapted to the manifold and the theoretical limit law.
//! - [`noise`]: martingale-difference perturbations on counter-based streams.
//! - [`sgd`]: the stochastic approximation driver and the burn-in average.
//! - [`linear_oracle`]: the linear averaged system used as an independent check.
//! - [`stats`]: estimators and goodness-of-fit statistics.

// `!(x < bound)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod linalg;
pub mod linear_oracle;
pub mod noise;
pub mod rng;
pub mod schedules;
pub mod sgd;
pub mod stats;
pub mod summation;

mod error;

pub use error::{Error, Result};
