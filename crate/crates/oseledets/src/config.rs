//! Numeric tolerances and iteration budgets shared across modules.
//!
//! Every threshold the algorithms consult lives here with its default, so a
//! run is fully reproducible from (seed, config) alone.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    /// Relative independence threshold: a basis is accepted when its volume
    /// exceeds `rank_tol` times the product of the basis vector norms.
    pub rank_tol: f64,
    /// Projectors must satisfy ||P^2 - P|| below this.
    pub idempotency_tol: f64,
    /// Linear programs declare optimality only when the duality gap is below this.
    pub duality_gap_tol: f64,
    /// Successive exponent estimates within this distance are grouped into one
    /// Lyapunov value with higher multiplicity.
    pub group_gap: f64,
    /// Growth values at or below this are reported as minus infinity.
    pub infinity_cut: f64,
    /// Per-step singular gap required to declare a filtration level resolved.
    pub singular_gap_min: f64,
    /// Tail residual above this marks an exponent estimate undecided.
    pub residual_fail: f64,
    /// Push-forward convergence: successive spaces must be within this
    /// Grassmann distance.
    pub d_h_tol: f64,
    /// Stride between compared push-forward depths.
    pub stride: usize,
    /// Hard cap on push-forward depth before declaring non-convergence.
    pub n_cap: usize,
    /// Products are re-orthonormalized every this many steps.
    pub reorth_every: usize,
    /// Fixed-point iteration stops when the weighted residual drops below this.
    pub fp_tol: f64,
    /// Fixed-point iteration budget.
    pub max_iter: usize,
    /// Successive fixed-point residual ratios persistently above this are a
    /// hard error.
    pub contraction_cap: f64,
    /// Minimum number of starts for sphere maximization.
    pub search_starts: usize,
    /// Sign vertices are fully enumerated up to this dimension.
    pub sign_vertex_dim_cap: usize,
    /// Relative tolerance for inverting the nonlinearity gauge by bisection.
    pub h_inv_tol: f64,
    /// A restricted inverse requires the image to match the target subspace
    /// within this Grassmann defect.
    pub restricted_image_tol: f64,
    /// Attempts at drawing a random bounded complement before giving up.
    pub complement_max_tries: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            rank_tol: 1e-9,
            idempotency_tol: 1e-10,
            duality_gap_tol: 1e-10,
            group_gap: 0.1,
            infinity_cut: -30.0,
            singular_gap_min: 0.05,
            residual_fail: 0.25,
            d_h_tol: 1e-7,
            stride: 5,
            n_cap: 500,
            reorth_every: 10,
            fp_tol: 1e-10,
            max_iter: 200,
            contraction_cap: 0.55,
            search_starts: 64,
            sign_vertex_dim_cap: 12,
            h_inv_tol: 1e-12,
            restricted_image_tol: 1e-6,
            complement_max_tries: 64,
        }
    }
}
