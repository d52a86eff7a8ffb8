//! Single-snapshot one-bit off-grid DOA estimation on sparse linear arrays.
//!
//! - [`geometry`]: array presets, steering vectors, on-grid and derivative
//!   dictionaries.
//! - [`sim`] / [`dataset`]: one-bit scene simulation and labeled datasets.
//! - [`solver`]: the iterative sparse-Bayesian MM solver (OGBRIM).
//! - [`net`] / [`weights`]: inference for the unrolled network.
//! - [`eval`]: peak extraction, scoring and Monte Carlo benchmarks.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mills;
pub mod net;
pub mod parity;
pub mod sim;
pub mod solver;
pub mod spectrum;
pub mod weights;

pub use error::{Error, Result};
