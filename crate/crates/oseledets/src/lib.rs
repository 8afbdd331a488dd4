//! Numerical Lyapunov analysis for random cocycles on finite-dimensional normed fibers.
//!
//! The crate computes three layers of structure for a measurable linear or
//! nonlinear cocycle over an invertible base system:
//!
//! - `spectrum`: Lyapunov exponents with multiplicities, extracted from the
//!   growth of k-dimensional volumes under cocycle products.
//! - `splitting`: the slow filtration and the fast Oseledets spaces, the
//!   latter obtained as limits of backward push-forwards of complements.
//! - `manifolds`: local stable and unstable manifolds of a stationary orbit,
//!   built as fixed points of weighted-sequence-space operators.
//!
//! Fibers carry explicit norms (`geometry::NormSpec`); every operation that
//! cannot be evaluated exactly in the chosen norm reports a heuristic flag
//! instead of silently pretending exactness. All randomness is counter-based
//! (`base::draw`), so every run is a pure function of the configured seed.

pub mod base;
pub mod config;
pub mod error;
pub mod geometry;
pub mod cocycle;
pub mod spectrum;
pub mod splitting;
pub mod manifolds;

pub use config::ToleranceConfig;
pub use error::{Error, Result};
