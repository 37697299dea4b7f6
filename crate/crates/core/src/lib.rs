//! Stochastic-thermodynamic heat engines driven by overdamped Langevin
//! dynamics: density functionals, Wasserstein-2 transport in one dimension,
//! ensemble dynamics with heat/work accounting, finite-time Carnot-like
//! cycles, optimal end-point states, and maximal-power bounds.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cycle;
pub mod dynamics;
pub mod error;
pub mod optima;
pub mod statespace;
pub mod transport;

pub use error::{EngineError, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
