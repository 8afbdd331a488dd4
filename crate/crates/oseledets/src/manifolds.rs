//! Local stable and unstable manifolds around a stationary orbit, built as
//! fixed points of weighted-sequence operators.
//!
//! A candidate manifold point is encoded as the full deviation sequence of
//! its orbit from the stationary one, living in a sup-weighted sequence
//! space. One operator application pushes the linear part forward (stable
//! side) or pulls it backward through restricted inverses (unstable side)
//! and convolves the nonlinear residuals against the splitting projectors;
//! the fixed point of the contraction is the manifold orbit itself. All
//! infinite series are truncated at a finite horizon and the dropped tail is
//! bounded with the measured constants and logged.

use crate::base::BasePoint;
use crate::cocycle::{compose_forward, perron_residual, restricted_inverse, NonlinearCocycle};
use crate::config::ToleranceConfig;
use crate::error::{Error, Result};
use crate::geometry::{
    fiber_norm, grassmann_delta, projection_norm, restricted_operator_norm, volume, Estimate,
    Fiber, NormSpec, Projector, Subspace,
};
use crate::spectrum::Direction;
use crate::splitting::SplittingEngine;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Which invariant manifold a context or chart describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Stable,
    Unstable,
}

/// A finite truncation of a sup-weighted deviation sequence: entry j lives
/// in the fiber at orbit offset +j (forward) or -j (backward) from the base
/// point, and the norm is max_j exp(upsilon j) |entry_j|.
#[derive(Debug, Clone)]
pub struct WeightedSequence {
    pub base_point: BasePoint,
    pub direction: Direction,
    pub upsilon: f64,
    pub horizon: usize,
    pub entries: Vec<DVector<f64>>,
    /// Bound on the series tail dropped past the horizon by the operator
    /// that produced this sequence (zero for hand-built inputs).
    pub truncation_bound: f64,
}

/// Everything one manifold computation needs along the orbit: subspaces,
/// projectors, one-step transfers, restricted inverses, and the measured
/// contraction constants.
pub struct PerronContext {
    pub cocycle: NonlinearCocycle,
    pub engine: Arc<SplittingEngine>,
    pub base_point: BasePoint,
    pub kind: ChartKind,
    pub upsilon: f64,
    pub horizon: usize,
    /// Filtration level of the splitting edge: first negative group (stable)
    /// or last positive group (unstable).
    pub edge_level: usize,
    /// The exponent at the edge: mu_{edge} < 0 (stable), > 0 (unstable).
    pub mu_edge: f64,
    /// The exponent of the nearest group on the other side of the edge
    /// (+inf / -inf when that side is empty).
    pub mu_outer: f64,
    pub h1: f64,
    pub h2: f64,
    /// Admissible parameter radius for the fixed-point guarantee.
    pub radius: f64,
    pub rho_tilde: f64,
    /// Bound on the fixed-point norm: min(h^{-1}(1/(2 h2))/2, rho_tilde).
    pub h_bound_1: f64,
    /// Equals radius; kept as the second explicit bound of the theory.
    pub h_bound_2: f64,
    /// Inner radius of the dynamical characterization (one admissible
    /// choice; others exist).
    pub rho_1: f64,
    /// Outer radius used by the membership test.
    pub rho_2: f64,
    /// Margin used in the geometric tail estimates.
    pub epsilon: f64,
    /// Decay rate of the truncated series tail.
    pub tail_rate: f64,
    pub tol: ToleranceConfig,
    // Orbit tables, index t = offset 0..=horizon+1 along theta (stable) or
    // sigma (unstable).
    points: Vec<BasePoint>,
    fibers: Vec<Fiber>,
    stationary: Vec<DVector<f64>>,
    s_space: Vec<Arc<Subspace>>,
    u_space: Vec<Arc<Subspace>>,
    proj_s: Vec<DMatrix<f64>>,
    proj_u: Vec<DMatrix<f64>>,
    pnorm_s: Vec<f64>,
    pnorm_u: Vec<f64>,
    /// Stable: one-step matrix E_t -> E_{t+1}; unstable: E_{t+1} -> E_t.
    step: Vec<DMatrix<f64>>,
    /// Stable: coords in U_{t+1} -> coords in U_t (one-step preimage);
    /// unstable: coords in U~_t -> coords in U~_{t+1}. Empty when U is zero.
    rinv_u: Vec<DMatrix<f64>>,
    /// Coordinate extractors pinv(basis) per offset for the u spaces.
    ucoord: Vec<DMatrix<f64>>,
}

fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(crate::geometry::pseudo_inverse(m, 1e-13))
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NEG_INFINITY;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        f64::NEG_INFINITY
    } else {
        num / den
    }
}

impl PerronContext {
    /// Context for the stable manifold at `p`: contracting directions are
    /// the filtration tail below the last nonnegative group.
    pub fn stable(
        nc: &NonlinearCocycle,
        engine: Arc<SplittingEngine>,
        p: &BasePoint,
        upsilon: f64,
        horizon: usize,
    ) -> Result<PerronContext> {
        let spec = &engine.spectrum;
        if !spec.all_resolved() {
            return Err(Error::InvalidParameter(
                "manifold context needs a fully resolved spectrum".into(),
            ));
        }
        let edge_level = spec
            .mu
            .iter()
            .position(|m| *m < 0.0)
            .map(|i| i + 1)
            .ok_or_else(|| {
                Error::InvalidParameter("no contracting part: every exponent is >= 0".into())
            })?;
        let mu_edge = spec.mu[edge_level - 1];
        if !(upsilon > 0.0 && upsilon < -mu_edge) {
            return Err(Error::InvalidParameter(format!(
                "upsilon {upsilon} outside (0, {})",
                -mu_edge
            )));
        }
        let mu_outer = if edge_level >= 2 {
            spec.mu[edge_level - 2]
        } else {
            f64::INFINITY
        };
        Self::build(
            nc,
            engine,
            p,
            ChartKind::Stable,
            upsilon,
            horizon,
            edge_level,
            mu_edge,
            mu_outer,
        )
    }

    /// Context for the unstable manifold at `p`: expanding directions are
    /// the fast spaces of the positive groups.
    pub fn unstable(
        nc: &NonlinearCocycle,
        engine: Arc<SplittingEngine>,
        p: &BasePoint,
        upsilon: f64,
        horizon: usize,
    ) -> Result<PerronContext> {
        let spec = &engine.spectrum;
        if !spec.all_resolved() {
            return Err(Error::InvalidParameter(
                "manifold context needs a fully resolved spectrum".into(),
            ));
        }
        if spec.mu.is_empty() || spec.mu[0] <= 0.0 {
            return Err(Error::InvalidParameter(
                "no expanding part: the top exponent is not positive".into(),
            ));
        }
        let edge_level = spec.mu.iter().take_while(|m| **m > 0.0).count();
        let mu_edge = spec.mu[edge_level - 1];
        if !(upsilon > 0.0 && upsilon < mu_edge) {
            return Err(Error::InvalidParameter(format!(
                "upsilon {upsilon} outside (0, {mu_edge})"
            )));
        }
        let mu_outer = if edge_level < spec.levels() {
            spec.mu[edge_level]
        } else {
            f64::NEG_INFINITY
        };
        Self::build(
            nc,
            engine,
            p,
            ChartKind::Unstable,
            upsilon,
            horizon,
            edge_level,
            mu_edge,
            mu_outer,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        nc: &NonlinearCocycle,
        engine: Arc<SplittingEngine>,
        p: &BasePoint,
        kind: ChartKind,
        upsilon: f64,
        horizon: usize,
        edge_level: usize,
        mu_edge: f64,
        mu_outer: f64,
    ) -> Result<PerronContext> {
        if horizon < 4 {
            return Err(Error::InvalidParameter(
                "manifold horizon must be at least 4".into(),
            ));
        }
        let tol = engine.tol.clone();
        let lin = &engine.cocycle;
        let n_pts = horizon + 2;
        let mut points = Vec::with_capacity(n_pts);
        let mut fibers = Vec::with_capacity(n_pts);
        let mut stationary = Vec::with_capacity(n_pts);
        let mut s_space = Vec::with_capacity(n_pts);
        let mut u_space = Vec::with_capacity(n_pts);
        for t in 0..n_pts {
            let off = match kind {
                ChartKind::Stable => t as i64,
                ChartKind::Unstable => -(t as i64),
            };
            let q = lin.base.shift(p, off);
            let fiber = lin.field.fiber(&q)?;
            stationary.push(nc.stationary(&q));
            match kind {
                ChartKind::Stable => {
                    s_space.push(engine.slow(&q, edge_level)?);
                    u_space.push(engine.fast_join(&q, edge_level - 1)?);
                }
                ChartKind::Unstable => {
                    u_space.push(engine.fast_join(&q, edge_level)?);
                    s_space.push(engine.slow(&q, edge_level + 1)?);
                }
            }
            points.push(q);
            fibers.push(fiber);
        }

        let mut proj_s = Vec::with_capacity(n_pts);
        let mut proj_u = Vec::with_capacity(n_pts);
        let mut pnorm_s = Vec::with_capacity(n_pts);
        let mut pnorm_u = Vec::with_capacity(n_pts);
        for t in 0..n_pts {
            let d = fibers[t].dim;
            let (ps, pu) = if u_space[t].dim() == 0 {
                (DMatrix::identity(d, d), DMatrix::zeros(d, d))
            } else if s_space[t].dim() == 0 {
                (DMatrix::zeros(d, d), DMatrix::identity(d, d))
            } else {
                let a = Projector::new(&s_space[t], &u_space[t], &tol)?;
                let b = Projector::new(&u_space[t], &s_space[t], &tol)?;
                (a.matrix, b.matrix)
            };
            proj_s.push(ps);
            proj_u.push(pu);
            pnorm_s.push(if s_space[t].dim() == 0 {
                0.0
            } else if u_space[t].dim() == 0 {
                1.0
            } else {
                projection_norm(&s_space[t], &u_space[t], &tol)?.value
            });
            pnorm_u.push(if u_space[t].dim() == 0 {
                0.0
            } else if s_space[t].dim() == 0 {
                1.0
            } else {
                projection_norm(&u_space[t], &s_space[t], &tol)?.value
            });
        }

        let mut step = Vec::with_capacity(n_pts - 1);
        let mut rinv_u = Vec::new();
        let mut ucoord = Vec::with_capacity(n_pts);
        for t in 0..n_pts {
            if u_space[t].dim() > 0 {
                ucoord.push(pinv(u_space[t].basis())?);
            } else {
                ucoord.push(DMatrix::zeros(0, fibers[t].dim));
            }
        }
        for t in 0..n_pts - 1 {
            match kind {
                ChartKind::Stable => {
                    step.push(lin.matrix(&points[t])?);
                    if u_space[t].dim() > 0 {
                        let prod = compose_forward(lin, &points[t], 1)?;
                        let inv = restricted_inverse(&prod, &u_space[t + 1], &u_space[t], &tol)?;
                        rinv_u.push(inv.to_dense());
                    }
                }
                ChartKind::Unstable => {
                    step.push(lin.matrix(&points[t + 1])?);
                    if u_space[t].dim() > 0 {
                        let prod = compose_forward(lin, &points[t + 1], 1)?;
                        let inv = restricted_inverse(&prod, &u_space[t], &u_space[t + 1], &tol)?;
                        rinv_u.push(inv.to_dense());
                    }
                }
            }
        }

        let gap = match kind {
            ChartKind::Stable => {
                if mu_outer.is_finite() {
                    mu_outer - mu_edge
                } else {
                    -mu_edge
                }
            }
            ChartKind::Unstable => {
                if mu_outer.is_finite() {
                    mu_edge - mu_outer
                } else {
                    mu_edge
                }
            }
        };
        let epsilon = (gap.min(upsilon)) / 10.0;
        let r = nc.nonlinearity.r;
        let tail_rate = match kind {
            ChartKind::Stable => upsilon * (1.0 + r) + mu_outer.min(1e18) - 3.0 * epsilon,
            ChartKind::Unstable => upsilon * (1.0 + r) + (-mu_outer).min(1e18) - 3.0 * epsilon,
        };

        let mut rho_tilde = f64::INFINITY;
        for (t, q) in points.iter().enumerate().take(horizon + 1) {
            rho_tilde = rho_tilde.min((t as f64 * upsilon).exp() * nc.nonlinearity.rho(q));
        }

        let mut ctx = PerronContext {
            cocycle: nc.clone(),
            engine,
            base_point: *p,
            kind,
            upsilon,
            horizon,
            edge_level,
            mu_edge,
            mu_outer,
            h1: 1.0,
            h2: 0.0,
            radius: 0.0,
            rho_tilde,
            h_bound_1: 0.0,
            h_bound_2: 0.0,
            rho_1: 0.0,
            rho_2: 0.0,
            epsilon,
            tail_rate,
            tol,
            points,
            fibers,
            stationary,
            s_space,
            u_space,
            proj_s,
            proj_u,
            pnorm_s,
            pnorm_u,
            step,
            rinv_u,
            ucoord,
        };
        let (h1, h2) = compute_h1_h2(&ctx)?;
        ctx.h1 = h1;
        ctx.h2 = h2;
        ctx.radius = perron_radius(&ctx)?;
        let hinv_half = if h2 > 0.0 {
            ctx.cocycle
                .nonlinearity
                .h_inv(1.0 / (2.0 * h2), ctx.tol.h_inv_tol)
        } else {
            f64::INFINITY
        };
        ctx.h_bound_1 = (0.5 * hinv_half).min(ctx.rho_tilde);
        ctx.h_bound_2 = ctx.radius;
        let hinv_full = if h2 > 0.0 {
            ctx.cocycle
                .nonlinearity
                .h_inv(1.0 / h2, ctx.tol.h_inv_tol)
        } else {
            f64::INFINITY
        };
        ctx.rho_1 = hinv_full
            .min(ctx.h_bound_2 / 2.0)
            .min(ctx.h_bound_1);
        ctx.rho_2 = ctx.h_bound_1;
        Ok(ctx)
    }

    pub fn stationary_origin(&self) -> &DVector<f64> {
        &self.stationary[0]
    }

    /// The linear model space the chart is tangent to at the stationary
    /// point: the slow tail (stable) or the joint fast space (unstable).
    pub fn tangent_space(&self) -> &Subspace {
        match self.kind {
            ChartKind::Stable => &self.s_space[0],
            ChartKind::Unstable => &self.u_space[0],
        }
    }

    pub fn zero_sequence(&self) -> WeightedSequence {
        WeightedSequence {
            base_point: self.base_point,
            direction: match self.kind {
                ChartKind::Stable => Direction::Forward,
                ChartKind::Unstable => Direction::Backward,
            },
            upsilon: self.upsilon,
            horizon: self.horizon,
            entries: (0..=self.horizon)
                .map(|t| DVector::zeros(self.fibers[t].dim))
                .collect(),
            truncation_bound: 0.0,
        }
    }

    /// max_j exp(upsilon j) |entry_j| in the per-offset fiber norms.
    pub fn weighted_norm(&self, seq: &WeightedSequence) -> Result<f64> {
        self.check_sequence(seq)?;
        let mut best = 0.0f64;
        for (j, e) in seq.entries.iter().enumerate() {
            let w = (j as f64 * self.upsilon).exp() * fiber_norm(e, &self.fibers[j].norm)?;
            best = best.max(w);
        }
        Ok(best)
    }

    fn check_sequence(&self, seq: &WeightedSequence) -> Result<()> {
        if seq.entries.len() != self.horizon + 1 {
            return Err(Error::DimensionMismatch {
                context: "weighted sequence length".into(),
                expected: self.horizon + 1,
                got: seq.entries.len(),
            });
        }
        for (j, e) in seq.entries.iter().enumerate() {
            if e.len() != self.fibers[j].dim {
                return Err(Error::DimensionMismatch {
                    context: format!("weighted sequence entry {j}"),
                    expected: self.fibers[j].dim,
                    got: e.len(),
                });
            }
        }
        Ok(())
    }

    /// Operator norm of a linear map given by the images of a subspace's
    /// basis columns, measured fiber-norm to fiber-norm.
    fn restricted_norm(
        &self,
        images: &DMatrix<f64>,
        domain: &Subspace,
        out_norm: &NormSpec,
    ) -> Result<f64> {
        if domain.dim() == 0 {
            return Ok(0.0);
        }
        let ext = images * pinv(domain.basis())?;
        Ok(restricted_operator_norm(&ext, domain, out_norm, &self.tol)?.value)
    }
}

/// Truncated suprema of the two contraction constants: h1 measures the
/// weighted decay of the linearization on the slow side (stable) or of the
/// restricted inverses on the fast side (unstable); h2 measures the weighted
/// double-sum gain of one residual convolution.
pub fn compute_h1_h2(ctx: &PerronContext) -> Result<(f64, f64)> {
    let n_hor = ctx.horizon;
    let ups = ctx.upsilon;
    let r = ctx.cocycle.nonlinearity.r;
    // Slow-side restricted norms per (start index, length).
    let mut snorm = vec![Vec::new(); n_hor + 1];
    for (t, row) in snorm.iter_mut().enumerate() {
        let dom = ctx.s_space[t].as_ref();
        let max_len = match ctx.kind {
            ChartKind::Stable => n_hor + 1 - t,
            ChartKind::Unstable => t,
        };
        row.push(if dom.dim() == 0 { 0.0 } else { 1.0 });
        if dom.dim() == 0 {
            row.resize(max_len + 1, 0.0);
            continue;
        }
        let mut images = dom.basis().clone();
        for m in 1..=max_len {
            match ctx.kind {
                ChartKind::Stable => {
                    images = &ctx.proj_s[t + m] * (&ctx.step[t + m - 1] * images);
                    row.push(ctx.restricted_norm(&images, dom, &ctx.fibers[t + m].norm)?);
                }
                ChartKind::Unstable => {
                    images = &ctx.proj_s[t - m] * (&ctx.step[t - m] * images);
                    row.push(ctx.restricted_norm(&images, dom, &ctx.fibers[t - m].norm)?);
                }
            }
        }
    }
    // Fast-side restricted inverse norms.
    // Stable: uinv[n][m] = norm of the preimage map U_{n+m} -> U_n.
    // Unstable: uinv[m][len] = norm of the chain coords@m -> coords@{m+len}.
    let has_u = ctx.u_space[0].dim() > 0;
    let mut uinv: Vec<Vec<f64>> = vec![Vec::new(); n_hor + 1];
    if has_u {
        for (start, row) in uinv.iter_mut().enumerate() {
            row.push(1.0);
            let k = ctx.u_space[start].dim();
            let mut chain = DMatrix::identity(k, k);
            let max_len = n_hor + 1 - start;
            for m in 1..=max_len {
                match ctx.kind {
                    ChartKind::Stable => {
                        // Extend the chain one step deeper into the future.
                        chain = &chain * &ctx.rinv_u[start + m - 1];
                        let images = ctx.u_space[start].basis() * &chain;
                        row.push(ctx.restricted_norm(
                            &images,
                            &ctx.u_space[start + m],
                            &ctx.fibers[start].norm,
                        )?);
                    }
                    ChartKind::Unstable => {
                        // Extend one step deeper into the past.
                        chain = &ctx.rinv_u[start + m - 1] * &chain;
                        let images = ctx.u_space[start + m].basis() * &chain;
                        row.push(ctx.restricted_norm(
                            &images,
                            &ctx.u_space[start],
                            &ctx.fibers[start + m].norm,
                        )?);
                    }
                }
            }
        }
    }

    let mut h1 = 1.0f64;
    for n in 0..=n_hor {
        let val = match ctx.kind {
            ChartKind::Stable => snorm[0].get(n).copied().unwrap_or(0.0),
            ChartKind::Unstable => {
                if has_u {
                    uinv[0].get(n).copied().unwrap_or(0.0)
                } else {
                    0.0
                }
            }
        };
        h1 = h1.max((n as f64 * ups).exp() * val);
    }

    let mut h2 = 0.0f64;
    for n in 0..=n_hor {
        let mut acc = 0.0f64;
        match ctx.kind {
            ChartKind::Stable => {
                for j in 0..n {
                    acc += (-(j as f64) * ups * (1.0 + r)).exp()
                        * ctx.cocycle.nonlinearity.f(&ctx.points[j])
                        * snorm[j + 1][n - j]
                        * ctx.pnorm_s[j + 1];
                }
                if has_u {
                    for j in n..=n_hor {
                        acc += (-(j as f64) * ups * (1.0 + r)).exp()
                            * ctx.cocycle.nonlinearity.f(&ctx.points[j])
                            * uinv[n][j - n + 1]
                            * ctx.pnorm_u[j + 1];
                    }
                }
            }
            ChartKind::Unstable => {
                if has_u {
                    for k in 0..n {
                        let m = n - 1 - k;
                        acc += (-((n - k) as f64) * ups * (1.0 + r)).exp()
                            * ctx.cocycle.nonlinearity.f(&ctx.points[n - k])
                            * uinv[m][k + 1]
                            * ctx.pnorm_u[m];
                    }
                }
                for k in n..=n_hor {
                    acc += (-((k + 1) as f64) * ups * (1.0 + r)).exp()
                        * ctx.cocycle.nonlinearity.f(&ctx.points[k + 1])
                        * snorm[k][k - n]
                        * ctx.pnorm_s[k];
                }
            }
        }
        h2 = h2.max((n as f64 * ups).exp() * acc);
    }
    Ok((h1, h2))
}

/// Admissible parameter radius: (1/(2 h1)) min{ h^{-1}(1/(2 h2))/2, rho~ }.
pub fn perron_radius(ctx: &PerronContext) -> Result<f64> {
    if !(ctx.h1.is_finite() && ctx.h1 >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "h1 = {} must be finite and at least 1",
            ctx.h1
        )));
    }
    let inner = if ctx.h2 > 0.0 {
        let hinv = ctx
            .cocycle
            .nonlinearity
            .h_inv(1.0 / (2.0 * ctx.h2), ctx.tol.h_inv_tol);
        (0.5 * hinv).min(ctx.rho_tilde)
    } else {
        ctx.rho_tilde
    };
    Ok(inner / (2.0 * ctx.h1))
}

fn residual_values(
    ctx: &PerronContext,
    seq: &WeightedSequence,
    count: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let q = match ctx.kind {
            ChartKind::Stable => ctx.points[j],
            ChartKind::Unstable => ctx.points[j + 1],
        };
        let xi = match ctx.kind {
            ChartKind::Stable => &seq.entries[j],
            ChartKind::Unstable => &seq.entries[j + 1],
        };
        out.push(perron_residual(&ctx.cocycle, &q, xi)?);
    }
    Ok(out)
}

/// One application of the stable-side operator: entry n is the slow push of
/// the parameter plus the causal residual convolution minus the anticausal
/// fast-side preimage sum, truncated at the horizon.
pub fn perron_map_stable(
    ctx: &PerronContext,
    v: &DVector<f64>,
    seq: &WeightedSequence,
) -> Result<WeightedSequence> {
    if ctx.kind != ChartKind::Stable {
        return Err(Error::InvalidParameter(
            "stable operator on an unstable context".into(),
        ));
    }
    ctx.check_sequence(seq)?;
    if v.len() != ctx.fibers[0].dim {
        return Err(Error::DimensionMismatch {
            context: "parameter vector".into(),
            expected: ctx.fibers[0].dim,
            got: v.len(),
        });
    }
    if ctx.s_space[0].dim() == 0 {
        if v.norm() > 0.0 {
            return Err(Error::InvalidParameter(
                "nonzero parameter with a zero-dimensional slow space".into(),
            ));
        }
    } else if v.norm() > 0.0 && !ctx.s_space[0].contains(v, 1e-6) {
        return Err(Error::InvalidParameter(
            "parameter vector is not in the slow space".into(),
        ));
    }
    let g_norm = ctx.weighted_norm(seq)?;
    if g_norm > ctx.rho_tilde * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "sequence weighted norm {g_norm} exceeds the gauge radius {}",
            ctx.rho_tilde
        )));
    }
    let n_hor = ctx.horizon;
    // P at theta^j of entry j, landing at offset j+1.
    let p_vals = residual_values(ctx, seq, n_hor + 1)?;

    // Causal part: forward recursion with re-projection.
    let mut fwd: Vec<DVector<f64>> = Vec::with_capacity(n_hor + 1);
    let mut acc_v = v.clone();
    let mut acc_sum = DVector::zeros(ctx.fibers[0].dim);
    fwd.push(acc_sum.clone());
    let mut v_pushed: Vec<DVector<f64>> = Vec::with_capacity(n_hor + 1);
    v_pushed.push(acc_v.clone());
    for n in 0..n_hor {
        acc_v = &ctx.proj_s[n + 1] * (&ctx.step[n] * &acc_v);
        v_pushed.push(acc_v.clone());
        acc_sum = &ctx.proj_s[n + 1] * (&ctx.step[n] * &acc_sum)
            + &ctx.proj_s[n + 1] * &p_vals[n];
        fwd.push(acc_sum.clone());
    }

    // Anticausal part in fast-space coordinates: downward recursion.
    let has_u = ctx.u_space[0].dim() > 0;
    let mut back: Vec<DVector<f64>> = vec![DVector::zeros(0); n_hor + 1];
    let mut tail_terms: Vec<DVector<f64>> = vec![DVector::zeros(0); n_hor + 1];
    if has_u {
        let coef = |j: usize| -> DVector<f64> {
            &ctx.ucoord[j + 1] * (&ctx.proj_u[j + 1] * &p_vals[j])
        };
        let mut b = &ctx.rinv_u[n_hor] * coef(n_hor);
        let mut t_term = b.clone();
        back[n_hor] = b.clone();
        tail_terms[n_hor] = t_term.clone();
        for n in (0..n_hor).rev() {
            b = &ctx.rinv_u[n] * &(coef(n) + b);
            t_term = &ctx.rinv_u[n] * t_term;
            back[n] = b.clone();
            tail_terms[n] = t_term.clone();
        }
    }

    let mut entries = Vec::with_capacity(n_hor + 1);
    let mut tail_scale = 0.0f64;
    for n in 0..=n_hor {
        let mut e = &v_pushed[n] + &fwd[n];
        if has_u {
            e -= ctx.u_space[n].basis() * &back[n];
            let t_vec = ctx.u_space[n].basis() * &tail_terms[n];
            tail_scale = tail_scale.max(
                (n as f64 * ctx.upsilon).exp() * fiber_norm(&t_vec, &ctx.fibers[n].norm)?,
            );
        }
        entries.push(e);
    }
    let q = (-ctx.tail_rate).exp();
    let truncation_bound = if q < 1.0 {
        tail_scale * q / (1.0 - q)
    } else {
        f64::INFINITY
    };
    Ok(WeightedSequence {
        base_point: ctx.base_point,
        direction: Direction::Forward,
        upsilon: ctx.upsilon,
        horizon: n_hor,
        entries,
        truncation_bound,
    })
}

/// One application of the unstable-side operator: entry n is the restricted
/// preimage of the parameter minus the anticausal fast-side sum plus the
/// causal slow-side sum, truncated at the horizon.
pub fn perron_map_unstable(
    ctx: &PerronContext,
    u: &DVector<f64>,
    seq: &WeightedSequence,
) -> Result<WeightedSequence> {
    if ctx.kind != ChartKind::Unstable {
        return Err(Error::InvalidParameter(
            "unstable operator on a stable context".into(),
        ));
    }
    ctx.check_sequence(seq)?;
    if u.len() != ctx.fibers[0].dim {
        return Err(Error::DimensionMismatch {
            context: "parameter vector".into(),
            expected: ctx.fibers[0].dim,
            got: u.len(),
        });
    }
    if u.norm() > 0.0 && !ctx.u_space[0].contains(u, 1e-6) {
        return Err(Error::InvalidParameter(
            "parameter vector is not in the fast space".into(),
        ));
    }
    let g_norm = ctx.weighted_norm(seq)?;
    if g_norm > ctx.rho_tilde * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "sequence weighted norm {g_norm} exceeds the gauge radius {}",
            ctx.rho_tilde
        )));
    }
    let n_hor = ctx.horizon;
    // P at sigma^{j+1} of entry j+1, landing at offset j, for j = 0..n_hor-1.
    let p_vals = residual_values(ctx, seq, n_hor)?;

    // Fast part: upward recursion along the backward orbit.
    let mut ucoords: Vec<DVector<f64>> = Vec::with_capacity(n_hor + 1);
    let mut a = &ctx.ucoord[0] * u;
    let mut m_acc = DVector::zeros(a.len());
    ucoords.push(&a - &m_acc);
    for n in 0..n_hor {
        // Middle-sum coefficient at index n.
        let b_n = &ctx.ucoord[n] * (&ctx.proj_u[n] * &p_vals[n]);
        m_acc = &ctx.rinv_u[n] * &(m_acc + b_n);
        a = &ctx.rinv_u[n] * &a;
        ucoords.push(&a - &m_acc);
    }

    // Slow part: downward recursion with re-projection, plus tail tracking.
    let mut slow: Vec<DVector<f64>> = vec![DVector::zeros(0); n_hor + 1];
    let mut tails: Vec<DVector<f64>> = vec![DVector::zeros(0); n_hor + 1];
    let mut w = DVector::zeros(ctx.fibers[n_hor].dim);
    let mut t_term = DVector::zeros(ctx.fibers[n_hor].dim);
    slow[n_hor] = w.clone();
    tails[n_hor] = t_term.clone();
    for n in (0..n_hor).rev() {
        let w_n = &ctx.proj_s[n] * &p_vals[n];
        w = &ctx.proj_s[n] * (&ctx.step[n] * &w) + &w_n;
        t_term = if n == n_hor - 1 {
            w_n.clone()
        } else {
            &ctx.proj_s[n] * (&ctx.step[n] * &t_term)
        };
        slow[n] = w.clone();
        tails[n] = t_term.clone();
    }

    let mut entries = Vec::with_capacity(n_hor + 1);
    let mut tail_scale = 0.0f64;
    for n in 0..=n_hor {
        let mut e = ctx.u_space[n].basis() * &ucoords[n];
        if slow[n].len() == e.len() {
            e += &slow[n];
            if tails[n].len() == e.len() {
                tail_scale = tail_scale.max(
                    (n as f64 * ctx.upsilon).exp()
                        * fiber_norm(&tails[n], &ctx.fibers[n].norm)?,
                );
            }
        }
        entries.push(e);
    }
    let q = (-ctx.tail_rate).exp();
    let truncation_bound = if q < 1.0 {
        tail_scale * q / (1.0 - q)
    } else {
        f64::INFINITY
    };
    Ok(WeightedSequence {
        base_point: ctx.base_point,
        direction: Direction::Backward,
        upsilon: ctx.upsilon,
        horizon: n_hor,
        entries,
        truncation_bound,
    })
}

fn apply_operator(
    ctx: &PerronContext,
    param: &DVector<f64>,
    seq: &WeightedSequence,
) -> Result<WeightedSequence> {
    match ctx.kind {
        ChartKind::Stable => perron_map_stable(ctx, param, seq),
        ChartKind::Unstable => perron_map_unstable(ctx, param, seq),
    }
}

fn seq_diff_norm(ctx: &PerronContext, a: &WeightedSequence, b: &WeightedSequence) -> Result<f64> {
    let mut best = 0.0f64;
    for (j, (x, y)) in a.entries.iter().zip(&b.entries).enumerate() {
        let w = (j as f64 * ctx.upsilon).exp() * fiber_norm(&(x - y), &ctx.fibers[j].norm)?;
        best = best.max(w);
    }
    Ok(best)
}

fn picard(
    ctx: &PerronContext,
    param: &DVector<f64>,
    init: WeightedSequence,
) -> Result<(WeightedSequence, f64)> {
    let mut cur = init;
    let mut log: Vec<(usize, f64)> = Vec::new();
    let mut prev_res = f64::INFINITY;
    let mut violations = 0usize;
    for iter in 0..ctx.tol.max_iter {
        let next = apply_operator(ctx, param, &cur)?;
        let res = seq_diff_norm(ctx, &next, &cur)?;
        log.push((iter, res));
        if res < ctx.tol.fp_tol {
            let norm = ctx.weighted_norm(&next)?;
            if norm > ctx.h_bound_1 * (1.0 + 1e-6) + ctx.tol.fp_tol {
                return Err(Error::BoundViolated {
                    what: "fixed point weighted norm".into(),
                    value: norm,
                    bound: ctx.h_bound_1,
                });
            }
            return Ok((next, res));
        }
        if prev_res.is_finite() && prev_res > 50.0 * ctx.tol.fp_tol {
            let ratio = res / prev_res;
            if ratio > ctx.tol.contraction_cap {
                violations += 1;
                if violations >= 3 {
                    return Err(Error::BoundViolated {
                        what: "fixed-point iteration contraction factor".into(),
                        value: ratio,
                        bound: ctx.tol.contraction_cap,
                    });
                }
            } else {
                violations = 0;
            }
        }
        prev_res = res;
        cur = next;
    }
    let last = log.last().map(|(_, r)| *r).unwrap_or(f64::INFINITY);
    Err(Error::Unconverged {
        what: "fixed-point iteration".into(),
        steps: ctx.tol.max_iter,
        last,
        log,
    })
}

fn check_param_radius(ctx: &PerronContext, param: &DVector<f64>) -> Result<()> {
    let norm = fiber_norm(param, &ctx.fibers[0].norm)?;
    if norm >= ctx.radius {
        return Err(Error::InvalidParameter(format!(
            "parameter norm {norm} is not inside the admissible radius {}",
            ctx.radius
        )));
    }
    Ok(())
}

/// Fixed point of the stable operator from the zero sequence.
pub fn solve_stable(
    ctx: &PerronContext,
    v: &DVector<f64>,
) -> Result<(WeightedSequence, f64)> {
    check_param_radius(ctx, v)?;
    picard(ctx, v, ctx.zero_sequence())
}

/// Fixed point of the stable operator from a caller-chosen admissible start.
pub fn solve_stable_from(
    ctx: &PerronContext,
    v: &DVector<f64>,
    init: WeightedSequence,
) -> Result<(WeightedSequence, f64)> {
    check_param_radius(ctx, v)?;
    picard(ctx, v, init)
}

/// Fixed point of the unstable operator from the zero sequence.
pub fn solve_unstable(
    ctx: &PerronContext,
    u: &DVector<f64>,
) -> Result<(WeightedSequence, f64)> {
    check_param_radius(ctx, u)?;
    picard(ctx, u, ctx.zero_sequence())
}

/// Fixed point of the unstable operator from a caller-chosen start.
pub fn solve_unstable_from(
    ctx: &PerronContext,
    u: &DVector<f64>,
    init: WeightedSequence,
) -> Result<(WeightedSequence, f64)> {
    check_param_radius(ctx, u)?;
    picard(ctx, u, init)
}

/// Result of replaying a fixed point against the genuine nonlinear orbit.
#[derive(Debug, Clone)]
pub struct OrbitCheck {
    /// Seed deviation reconstructed from the series.
    pub xi: DVector<f64>,
    /// Per-offset relative discrepancy between the sequence entries and the
    /// true orbit deviations.
    pub series: Vec<(usize, f64)>,
    pub max_discrepancy: f64,
}

/// Reconstruct the seed deviation from a stable fixed point and forward-
/// iterate the true map alongside the sequence entries.
pub fn fixed_point_orbit_check(
    ctx: &PerronContext,
    v: &DVector<f64>,
    seq: &WeightedSequence,
) -> Result<OrbitCheck> {
    if ctx.kind != ChartKind::Stable {
        return Err(Error::InvalidParameter(
            "orbit check for forward sequences needs a stable context".into(),
        ));
    }
    ctx.check_sequence(seq)?;
    let n_hor = ctx.horizon;
    let p_vals = residual_values(ctx, seq, n_hor + 1)?;
    // Seed: the parameter minus the truncated fast-side preimage series.
    let mut xi = v.clone();
    if ctx.u_space[0].dim() > 0 {
        let mut b = &ctx.rinv_u[n_hor]
            * (&ctx.ucoord[n_hor + 1] * (&ctx.proj_u[n_hor + 1] * &p_vals[n_hor]));
        for j in (0..n_hor).rev() {
            let c = &ctx.ucoord[j + 1] * (&ctx.proj_u[j + 1] * &p_vals[j]);
            b = &ctx.rinv_u[j] * &(c + b);
        }
        xi -= ctx.u_space[0].basis() * b;
    }
    let mut z = &ctx.stationary[0] + &xi;
    let mut series = Vec::with_capacity(n_hor + 1);
    let mut max_d = 0.0f64;
    for j in 0..=n_hor {
        let dev = &z - &ctx.stationary[j];
        let d = fiber_norm(&(&dev - &seq.entries[j]), &ctx.fibers[j].norm)?
            / (1.0 + fiber_norm(&seq.entries[j], &ctx.fibers[j].norm)?);
        series.push((j, d));
        max_d = max_d.max(d);
        if j < n_hor {
            z = ctx.cocycle.map(&ctx.points[j], &z)?;
        }
    }
    Ok(OrbitCheck {
        xi,
        series,
        max_discrepancy: max_d,
    })
}

/// Verify the backward-orbit identity of an unstable fixed point: mapping
/// entry n forward k steps must reproduce entry n-k, for all pairs.
pub fn unstable_orbit_check(ctx: &PerronContext, seq: &WeightedSequence) -> Result<f64> {
    if ctx.kind != ChartKind::Unstable {
        return Err(Error::InvalidParameter(
            "backward orbit check needs an unstable context".into(),
        ));
    }
    ctx.check_sequence(seq)?;
    let mut max_d = 0.0f64;
    for n in 0..=ctx.horizon {
        let mut z = &ctx.stationary[n] + &seq.entries[n];
        for k in 1..=n {
            let m = n - k + 1; // map from offset m to m-1
            z = ctx.cocycle.map(&ctx.points[m], &z)?;
            let dev = &z - &ctx.stationary[n - k];
            let d = fiber_norm(&(&dev - &seq.entries[n - k]), &ctx.fibers[n - k].norm)?
                / (1.0 + fiber_norm(&seq.entries[n - k], &ctx.fibers[n - k].norm)?);
            max_d = max_d.max(d);
        }
    }
    Ok(max_d)
}

/// A computed manifold chart: parameters in the tangent model space and the
/// corresponding points, with the per-point diagnostics.
#[derive(Debug, Clone)]
pub struct ManifoldChart {
    pub base_point: BasePoint,
    pub kind: ChartKind,
    pub upsilon: f64,
    pub radius: f64,
    pub origin: DVector<f64>,
    pub tangent: Subspace,
    pub parameters: Vec<DVector<f64>>,
    pub points: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
    pub decay_rates: Vec<f64>,
    pub weighted_sups: Vec<f64>,
    pub truncation_bounds: Vec<f64>,
    /// Unstable only: relative error of re-composing the deepest backward
    /// entry forward to the chart point. Empty for stable charts.
    pub recomposition_errors: Vec<f64>,
    /// Smallest absolute finite exponent; positivity certifies
    /// hyperbolicity.
    pub min_abs_mu: f64,
}

fn min_abs_finite_mu(ctx: &PerronContext) -> f64 {
    ctx.engine
        .spectrum
        .mu
        .iter()
        .filter(|m| m.is_finite())
        .fold(f64::INFINITY, |a, m| a.min(m.abs()))
}

/// Solve the stable fixed point on a parameter grid and verify forward
/// decay of every chart point against the true nonlinear orbit.
pub fn stable_chart(ctx: &PerronContext, grid: &[DVector<f64>]) -> Result<ManifoldChart> {
    if ctx.kind != ChartKind::Stable {
        return Err(Error::InvalidParameter(
            "stable chart needs a stable context".into(),
        ));
    }
    let mut parameters = Vec::with_capacity(grid.len());
    let mut points = Vec::with_capacity(grid.len());
    let mut residuals = Vec::with_capacity(grid.len());
    let mut decay_rates = Vec::with_capacity(grid.len());
    let mut weighted_sups = Vec::with_capacity(grid.len());
    let mut truncation_bounds = Vec::with_capacity(grid.len());
    for v in grid {
        let (seq, res) = solve_stable(ctx, v)?;
        let z = &ctx.stationary[0] + &seq.entries[0];
        // Replay the true orbit: weighted sup and decay rate of the
        // deviations, independent of the series representation. The replay
        // is only trusted up to the deviation's first minimum: past it the
        // computed orbit is dominated by rounding amplified along the
        // expanding directions, not by the manifold point itself.
        let mut w = z.clone();
        let mut devs = Vec::with_capacity(ctx.horizon + 1);
        for n in 0..=ctx.horizon {
            devs.push(fiber_norm(&(&w - &ctx.stationary[n]), &ctx.fibers[n].norm)?);
            if n < ctx.horizon {
                w = ctx.cocycle.map(&ctx.points[n], &w)?;
            }
        }
        let n_trust = devs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut sup = 0.0f64;
        let mut fit: Vec<(f64, f64)> = Vec::new();
        for (n, dev) in devs.iter().enumerate().take(n_trust + 1) {
            sup = sup.max((n as f64 * ctx.upsilon).exp() * dev);
            if n >= 1 && *dev > 1e-300 {
                fit.push((n as f64, dev.ln()));
            }
        }
        let rate = least_squares_slope(&fit);
        if rate > ctx.mu_edge + 0.05 {
            return Err(Error::BoundViolated {
                what: "chart point forward decay rate".into(),
                value: rate,
                bound: ctx.mu_edge + 0.05,
            });
        }
        parameters.push(v.clone());
        points.push(z);
        residuals.push(res);
        decay_rates.push(rate);
        weighted_sups.push(sup);
        truncation_bounds.push(seq.truncation_bound);
    }
    Ok(ManifoldChart {
        base_point: ctx.base_point,
        kind: ChartKind::Stable,
        upsilon: ctx.upsilon,
        radius: ctx.radius,
        origin: ctx.stationary[0].clone(),
        tangent: ctx.s_space[0].as_ref().clone(),
        parameters,
        points,
        residuals,
        decay_rates,
        weighted_sups,
        truncation_bounds,
        recomposition_errors: Vec::new(),
        min_abs_mu: min_abs_finite_mu(ctx),
    })
}

/// Solve the unstable fixed point on a parameter grid; verify the backward
/// orbit identity, backward decay, and exact forward re-composition.
pub fn unstable_chart(ctx: &PerronContext, grid: &[DVector<f64>]) -> Result<ManifoldChart> {
    if ctx.kind != ChartKind::Unstable {
        return Err(Error::InvalidParameter(
            "unstable chart needs an unstable context".into(),
        ));
    }
    let mut parameters = Vec::with_capacity(grid.len());
    let mut points = Vec::with_capacity(grid.len());
    let mut residuals = Vec::with_capacity(grid.len());
    let mut decay_rates = Vec::with_capacity(grid.len());
    let mut weighted_sups = Vec::with_capacity(grid.len());
    let mut truncation_bounds = Vec::with_capacity(grid.len());
    let mut recomposition_errors = Vec::with_capacity(grid.len());
    for u in grid {
        let (seq, res) = solve_unstable(ctx, u)?;
        let z = &ctx.stationary[0] + &seq.entries[0];
        let uy = unstable_orbit_check(ctx, &seq)?;
        if uy > ctx.tol.fp_tol {
            return Err(Error::BoundViolated {
                what: "backward orbit identity of the unstable fixed point".into(),
                value: uy,
                bound: ctx.tol.fp_tol,
            });
        }
        let mut sup = 0.0f64;
        let mut fit: Vec<(f64, f64)> = Vec::new();
        for n in 0..=ctx.horizon {
            let dev = fiber_norm(&seq.entries[n], &ctx.fibers[n].norm)?;
            sup = sup.max((n as f64 * ctx.upsilon).exp() * dev);
            if n >= 1 && dev > 1e-300 {
                fit.push((n as f64, dev.ln()));
            }
        }
        let rate = least_squares_slope(&fit);
        if rate > -ctx.mu_edge + 0.05 {
            return Err(Error::BoundViolated {
                what: "chart point backward decay rate".into(),
                value: rate,
                bound: -ctx.mu_edge + 0.05,
            });
        }
        // Re-compose: iterate the true map forward from the deepest entry.
        let mut w = &ctx.stationary[ctx.horizon] + &seq.entries[ctx.horizon];
        for m in (1..=ctx.horizon).rev() {
            w = ctx.cocycle.map(&ctx.points[m], &w)?;
        }
        let rec = fiber_norm(&(&w - &z), &ctx.fibers[0].norm)?
            / (1.0 + fiber_norm(&z, &ctx.fibers[0].norm)?);
        if rec > 1e-8 {
            return Err(Error::BoundViolated {
                what: "forward re-composition of the backward orbit".into(),
                value: rec,
                bound: 1e-8,
            });
        }
        parameters.push(u.clone());
        points.push(z);
        residuals.push(res);
        decay_rates.push(rate);
        weighted_sups.push(sup);
        truncation_bounds.push(seq.truncation_bound);
        recomposition_errors.push(rec);
    }
    Ok(ManifoldChart {
        base_point: ctx.base_point,
        kind: ChartKind::Unstable,
        upsilon: ctx.upsilon,
        radius: ctx.radius,
        origin: ctx.stationary[0].clone(),
        tangent: ctx.u_space[0].as_ref().clone(),
        parameters,
        points,
        residuals,
        decay_rates,
        weighted_sups,
        truncation_bounds,
        recomposition_errors,
        min_abs_mu: min_abs_finite_mu(ctx),
    })
}

/// Weighted sup of the true forward orbit deviation from a candidate point;
/// membership in the local manifold compares this against rho_2.
///
/// The window is capped so that machine rounding amplified along the top
/// exponent cannot reach the membership threshold: genuine escape from the
/// manifold is still visible inside the window because it starts far above
/// the rounding floor.
pub fn membership_weighted_sup(ctx: &PerronContext, z: &DVector<f64>) -> Result<f64> {
    if ctx.kind != ChartKind::Stable {
        return Err(Error::InvalidParameter(
            "forward membership test needs a stable context".into(),
        ));
    }
    let growth = ctx.engine.spectrum.mu[0].max(0.0);
    let n_eff = if growth > 0.0 {
        let noise = 1e-14 * (1.0 + fiber_norm(z, &ctx.fibers[0].norm)?);
        let budget = (0.05 * ctx.rho_2 / noise).max(1.0).ln() / (ctx.upsilon + growth);
        (budget.floor() as usize).min(ctx.horizon)
    } else {
        ctx.horizon
    };
    let mut w = z.clone();
    let mut sup = 0.0f64;
    for n in 0..=n_eff {
        let dev = fiber_norm(&(&w - &ctx.stationary[n]), &ctx.fibers[n].norm)?;
        sup = sup.max((n as f64 * ctx.upsilon).exp() * dev);
        if n < n_eff {
            w = ctx.cocycle.map(&ctx.points[n], &w)?;
        }
    }
    Ok(sup)
}

/// First-order tangency of a chart: extrapolated secants through the origin
/// must fall into the predicted tangent space.
pub fn tangency_check(chart: &ManifoldChart, tol: &ToleranceConfig) -> Result<Estimate> {
    // Group parameters into rays and demand at least two scales on each.
    let mut rays: Vec<(DVector<f64>, Vec<(f64, DVector<f64>)>)> = Vec::new();
    for (v, z) in chart.parameters.iter().zip(&chart.points) {
        let h = v.norm();
        if h == 0.0 {
            continue;
        }
        let dir = v / h;
        let secant = (z - &chart.origin) / h;
        match rays
            .iter_mut()
            .find(|(d, _)| (d - &dir).norm() < 1e-9)
        {
            Some((_, list)) => list.push((h, secant)),
            None => rays.push((dir, vec![(h, secant)])),
        }
    }
    if rays.is_empty() {
        return Err(Error::EmptyInput("no nonzero chart parameters".into()));
    }
    let mut secants: Vec<DVector<f64>> = Vec::new();
    for (_, list) in rays.iter_mut() {
        if list.len() < 2 {
            return Err(Error::InvalidParameter(
                "tangency needs at least two scales per parameter ray".into(),
            ));
        }
        list.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (h1, s1) = &list[0];
        let (h2, s2) = &list[1];
        // Linear-in-h extrapolation to h = 0.
        let ex = (s1 * *h2 - s2 * *h1) / (h2 - h1);
        secants.push(ex);
    }
    let m = DMatrix::from_columns(&secants);
    let q = crate::geometry::thin_orthonormal(&m, 1e-10);
    let span = Subspace::new(chart.tangent.fiber().clone(), q, tol)?;
    grassmann_delta(&span, &chart.tangent, tol)
}

/// Joint position of the two tangent spaces at a common stationary point.
#[derive(Debug, Clone)]
pub struct TransversalityReport {
    /// Volume of the concatenated normalized tangent bases.
    pub volume: f64,
    pub proj_stable_along_unstable: Estimate,
    pub proj_unstable_along_stable: Estimate,
}

/// Check that the stable and unstable tangents span the fiber transversally.
/// Refused when the spectrum is not safely hyperbolic.
pub fn transversality_check(
    stable: &ManifoldChart,
    unstable: &ManifoldChart,
    tol: &ToleranceConfig,
) -> Result<TransversalityReport> {
    if stable.kind != ChartKind::Stable || unstable.kind != ChartKind::Unstable {
        return Err(Error::InvalidParameter(
            "transversality needs one stable and one unstable chart".into(),
        ));
    }
    if stable.base_point != unstable.base_point {
        return Err(Error::InvalidParameter(
            "transversality needs charts at the same base point".into(),
        ));
    }
    let hyp = stable.min_abs_mu.min(unstable.min_abs_mu);
    if !(hyp > tol.group_gap) {
        return Err(Error::InvalidParameter(format!(
            "refusing transversality check: an exponent sits within {} of zero (not hyperbolic)",
            tol.group_gap
        )));
    }
    let fiber = stable.tangent.fiber().clone();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    cols.extend(stable.tangent.columns());
    cols.extend(unstable.tangent.columns());
    let normalized: Vec<DVector<f64>> = cols
        .into_iter()
        .map(|v| {
            let n = fiber_norm(&v, &fiber.norm)?;
            Ok(v / n)
        })
        .collect::<Result<_>>()?;
    let vol = volume(&normalized, &fiber, tol)?;
    if vol <= tol.rank_tol {
        return Err(Error::DependentBasis {
            volume: vol,
            threshold: tol.rank_tol,
        });
    }
    Ok(TransversalityReport {
        volume: vol,
        proj_stable_along_unstable: projection_norm(&stable.tangent, &unstable.tangent, tol)?,
        proj_unstable_along_stable: projection_norm(&unstable.tangent, &stable.tangent, tol)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::BaseSystem;
    use crate::cocycle::builtins::builtin;
    use crate::cocycle::{FieldSpec, NonlinearityParams};
    use crate::spectrum::spectrum_of;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn saddle() -> NonlinearCocycle {
        let sys = builtin(
            "deterministic_saddle",
            &serde_json::Value::Null,
            BaseSystem::iid_shift(7),
        )
        .unwrap();
        sys.nonlinear().unwrap().clone()
    }

    fn engine_for(nc: &NonlinearCocycle) -> Arc<SplittingEngine> {
        let lin = nc.linearized();
        let p = lin.base.origin_point();
        let spec = spectrum_of(&lin, &p, 2, 60, Direction::Forward, &tol()).unwrap();
        Arc::new(SplittingEngine::new(lin, spec, tol()))
    }

    /// A linear map wrapped as a nonlinear cocycle: residuals vanish.
    fn linear_saddle() -> NonlinearCocycle {
        let base = BaseSystem::iid_shift(11);
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let a2 = a.clone();
        NonlinearCocycle::new(
            base,
            FieldSpec::constant(2, NormSpec::L2),
            Arc::new(move |_, x: &DVector<f64>| &a * x),
            Arc::new(move |_, _: &DVector<f64>| a2.clone()),
            Arc::new(|_| DVector::zeros(2)),
            NonlinearityParams::constant(1.0, 1.0, 1.0, 1.0).unwrap(),
        )
    }

    #[test]
    fn saddle_h1_is_one_and_window_is_enforced() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::stable(&nc, engine.clone(), &p, 0.5, 30).unwrap();
        assert!((ctx.h1 - 1.0).abs() < 1e-12, "h1 = {}", ctx.h1);
        assert!(ctx.h2.is_finite() && ctx.h2 > 0.0);
        assert!(ctx.radius > 0.0);
        // upsilon at the edge exponent is rejected, as is zero.
        assert!(PerronContext::stable(&nc, engine.clone(), &p, 2.0f64.ln(), 30).is_err());
        assert!(PerronContext::stable(&nc, engine, &p, 0.0, 30).is_err());
    }

    #[test]
    fn radius_arithmetic_matches_the_closed_form() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let mut ctx = PerronContext::stable(&nc, engine, &p, 0.5, 20).unwrap();
        ctx.h1 = 1.0;
        ctx.h2 = 1.0;
        ctx.rho_tilde = 1.0;
        // h(x) = x, so h^{-1}(1/2)/2 = 1/4 and the radius is 1/8.
        let r = perron_radius(&ctx).unwrap();
        assert!((r - 0.125).abs() < 1e-9, "radius {r}");
        ctx.h2 = 0.0;
        let r0 = perron_radius(&ctx).unwrap();
        assert!((r0 - 0.5).abs() < 1e-12, "degenerate radius {r0}");
    }

    #[test]
    fn linear_system_fixed_point_is_the_pushed_parameter() {
        let nc = linear_saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 20).unwrap();
        let v = DVector::from_column_slice(&[0.05, 0.0]);
        let (seq, res) = solve_stable(&ctx, &v).unwrap();
        assert!(res < 1e-12);
        for n in 0..=20usize {
            let expect = 0.05 * 0.5f64.powi(n as i32);
            assert!((seq.entries[n][0] - expect).abs() < 1e-14);
            assert!(seq.entries[n][1].abs() < 1e-14);
        }
        let check = fixed_point_orbit_check(&ctx, &v, &seq).unwrap();
        assert!(check.max_discrepancy < 1e-12, "{}", check.max_discrepancy);
        assert!(seq.truncation_bound < 1e-14);
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 20).unwrap();
        let v = DVector::zeros(2);
        let out = perron_map_stable(&ctx, &v, &ctx.zero_sequence()).unwrap();
        for e in &out.entries {
            assert!(e.norm() == 0.0);
        }
    }

    #[test]
    fn saddle_fixed_point_lies_on_the_quadratic_graph() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 40).unwrap();
        for &x in &[0.04f64, -0.03, 0.01] {
            let v = DVector::from_column_slice(&[x, 0.0]);
            let (seq, res) = solve_stable(&ctx, &v).unwrap();
            assert!(res < tol().fp_tol);
            let z = &seq.entries[0];
            assert!((z[0] - x).abs() < 1e-12);
            let expect = -(4.0 / 7.0) * x * x;
            assert!(
                (z[1] - expect).abs() < 1e-10,
                "x={x}: got {} want {expect}",
                z[1]
            );
        }
    }

    #[test]
    fn manual_iteration_converges_outside_the_guaranteed_radius() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 40).unwrap();
        let v = DVector::from_column_slice(&[0.1, 0.0]);
        assert!(v.norm() >= ctx.radius, "test premise: 0.1 exceeds the radius");
        let mut cur = ctx.zero_sequence();
        for _ in 0..60 {
            cur = perron_map_stable(&ctx, &v, &cur).unwrap();
        }
        let expect = -(4.0 / 7.0) * 0.01;
        assert!((cur.entries[0][1] - expect).abs() < 1e-9);
    }

    #[test]
    fn orbit_check_flags_perturbed_sequences() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 30).unwrap();
        let v = DVector::from_column_slice(&[0.04, 0.0]);
        let (seq, _) = solve_stable(&ctx, &v).unwrap();
        let good = fixed_point_orbit_check(&ctx, &v, &seq).unwrap();
        assert!(good.max_discrepancy < 1e-8, "{}", good.max_discrepancy);
        let mut bad = seq.clone();
        bad.entries[3][1] += 1e-4;
        let flagged = fixed_point_orbit_check(&ctx, &v, &bad).unwrap();
        assert!(flagged.max_discrepancy > 1e-5);
    }

    #[test]
    fn stable_chart_matches_the_analytic_manifold() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 40).unwrap();
        let grid: Vec<DVector<f64>> = [0.01f64, -0.01, 0.02, -0.02, 0.04, -0.04, 0.0]
            .iter()
            .map(|x| DVector::from_column_slice(&[*x, 0.0]))
            .collect();
        let chart = stable_chart(&ctx, &grid).unwrap();
        for (v, z) in chart.parameters.iter().zip(&chart.points) {
            let x = v[0];
            assert!((z[1] - (-(4.0 / 7.0) * x * x)).abs() < 1e-8);
        }
        // The zero parameter sits exactly on the stationary point.
        assert!(chart.points[6].norm() == 0.0);
        for rate in chart.decay_rates.iter().take(6) {
            assert!(*rate <= -(2.0f64.ln()) + 0.05, "rate {rate}");
        }
        let delta = tangency_check(&chart, &tol()).unwrap();
        assert!(delta.value < 1e-6, "tangency {}", delta.value);
    }

    #[test]
    fn unstable_chart_is_the_vertical_axis_with_exact_backward_orbit() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::unstable(&nc, engine, &p, 0.5, 40).unwrap();
        let grid: Vec<DVector<f64>> = [0.01f64, -0.01, 0.02, -0.02]
            .iter()
            .map(|y| DVector::from_column_slice(&[0.0, *y]))
            .collect();
        let chart = unstable_chart(&ctx, &grid).unwrap();
        for (u, z) in chart.parameters.iter().zip(&chart.points) {
            assert!(z[0].abs() < 1e-12, "x-component {}", z[0]);
            assert!((z[1] - u[1]).abs() < 1e-10);
        }
        for rec in &chart.recomposition_errors {
            assert!(*rec < 1e-8);
        }
        // Backward entries halve exactly: (0, y 2^{-n}).
        let (seq, _) = solve_unstable(&ctx, &grid[0]).unwrap();
        for n in 0..=40usize {
            assert!(seq.entries[n][0].abs() < 1e-15);
            let expect = 0.01 * 0.5f64.powi(n as i32);
            assert!((seq.entries[n][1] - expect).abs() < 1e-12);
        }
        let uy = unstable_orbit_check(&ctx, &seq).unwrap();
        assert!(uy < 1e-10, "orbit identity {uy}");
        let delta = tangency_check(&chart, &tol()).unwrap();
        assert!(delta.value < 1e-6, "tangency {}", delta.value);
    }

    #[test]
    fn linear_unstable_entries_are_restricted_inverse_powers() {
        let nc = linear_saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::unstable(&nc, engine, &p, 0.5, 20).unwrap();
        let u = DVector::from_column_slice(&[0.0, 0.05]);
        let (seq, res) = solve_unstable(&ctx, &u).unwrap();
        assert!(res < 1e-12);
        for n in 0..=20usize {
            let expect = 0.05 * 0.5f64.powi(n as i32);
            assert!((seq.entries[n][1] - expect).abs() < 1e-14);
            assert!(seq.entries[n][0].abs() < 1e-14);
        }
    }

    #[test]
    fn transversality_holds_for_the_saddle_and_refuses_degenerate_spectra() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let s_ctx = PerronContext::stable(&nc, engine.clone(), &p, 0.5, 30).unwrap();
        let u_ctx = PerronContext::unstable(&nc, engine, &p, 0.5, 30).unwrap();
        let grid_s: Vec<DVector<f64>> = [0.01f64, 0.02]
            .iter()
            .map(|x| DVector::from_column_slice(&[*x, 0.0]))
            .collect();
        let grid_u: Vec<DVector<f64>> = [0.01f64, 0.02]
            .iter()
            .map(|y| DVector::from_column_slice(&[0.0, *y]))
            .collect();
        let sc = stable_chart(&s_ctx, &grid_s).unwrap();
        let uc = unstable_chart(&u_ctx, &grid_u).unwrap();
        let rep = transversality_check(&sc, &uc, &tol()).unwrap();
        assert!((rep.volume - 1.0).abs() < 1e-9, "volume {}", rep.volume);
        assert!((rep.proj_stable_along_unstable.value - 1.0).abs() < 1e-9);
        let mut fake = sc.clone();
        fake.min_abs_mu = 0.01;
        assert!(transversality_check(&fake, &uc, &tol()).is_err());
    }

    #[test]
    fn parameter_lipschitz_bound_holds_on_the_saddle() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 40).unwrap();
        let va = DVector::from_column_slice(&[0.03, 0.0]);
        let vb = DVector::from_column_slice(&[0.02, 0.0]);
        let (ga, _) = solve_stable(&ctx, &va).unwrap();
        let (gb, _) = solve_stable(&ctx, &vb).unwrap();
        let diff = seq_diff_norm(&ctx, &ga, &gb).unwrap();
        let bound = 2.0 * ctx.h1 * (&va - &vb).norm() * 1.05;
        assert!(diff <= bound, "Lipschitz: {diff} vs {bound}");
    }

    #[test]
    fn fixed_point_is_unique_across_initial_guesses() {
        let nc = saddle();
        let engine = engine_for(&nc);
        let p = nc.base.origin_point();
        let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 30).unwrap();
        let v = DVector::from_column_slice(&[0.03, 0.0]);
        let (from_zero, _) = solve_stable(&ctx, &v).unwrap();
        let mut init = ctx.zero_sequence();
        for (j, e) in init.entries.iter_mut().enumerate() {
            e[0] = 0.01 * (-(j as f64) * ctx.upsilon).exp();
            e[1] = -0.005 * (-(j as f64) * ctx.upsilon).exp();
        }
        let (from_guess, _) = solve_stable_from(&ctx, &v, init).unwrap();
        let gap = seq_diff_norm(&ctx, &from_zero, &from_guess).unwrap();
        assert!(gap <= 10.0 * tol().fp_tol, "uniqueness gap {gap}");
    }

    #[test]
    fn charts_nest_in_upsilon_and_forward_images_stay_members() {
        let nc = saddle();
        let p = nc.base.origin_point();
        let engine = engine_for(&nc);
        let ctx_lo = PerronContext::stable(&nc, engine.clone(), &p, 0.2, 40).unwrap();
        let ctx_hi = PerronContext::stable(&nc, engine.clone(), &p, 0.6, 40).unwrap();
        let v = DVector::from_column_slice(&[0.02, 0.0]);
        let (seq, _) = solve_stable(&ctx_hi, &v).unwrap();
        let z = ctx_hi.stationary_origin() + &seq.entries[0];
        // Stronger-weight chart points pass the weaker membership test.
        let sup_lo = membership_weighted_sup(&ctx_lo, &z).unwrap();
        assert!(sup_lo < ctx_lo.rho_2, "{sup_lo} vs {}", ctx_lo.rho_2);
        // Forward images pass membership at the shifted point.
        let q = nc.base.shift(&p, 3);
        let ctx_fwd = PerronContext::stable(&nc, engine, &q, 0.6, 40).unwrap();
        let z3 = nc.iterate(&p, &z, 3).unwrap();
        let sup3 = membership_weighted_sup(&ctx_fwd, &z3).unwrap();
        assert!(sup3 < ctx_fwd.rho_2, "{sup3} vs {}", ctx_fwd.rho_2);
    }

    #[test]
    fn random_quadratic_saddle_round_trips() {
        let params = serde_json::json!({
            "log_a": [-0.9, -0.5],
            "log_b": [0.5, 0.9],
        });
        let sys = builtin("quadratic_saddle", &params, BaseSystem::iid_shift(21)).unwrap();
        let nc = sys.nonlinear().unwrap().clone();
        let lin = nc.linearized();
        let p = lin.base.origin_point();
        let spec = spectrum_of(&lin, &p, 2, 4000, Direction::Forward, &tol()).unwrap();
        assert_eq!(spec.levels(), 2);
        let engine = Arc::new(SplittingEngine::new(lin, spec, tol()));
        // Horizon 25: the orbit replay in the discrepancy check seeds
        // rounding noise that grows like exp(mu_1 n); 25 steps keeps it
        // well under the asserted tolerance for log_b up to 0.9.
        let s_ctx = PerronContext::stable(&nc, engine.clone(), &p, 0.2, 25).unwrap();
        let x = (0.4 * s_ctx.radius).min(0.02);
        let v = DVector::from_column_slice(&[x, 0.0]);
        let (seq, res) = solve_stable(&s_ctx, &v).unwrap();
        assert!(res < tol().fp_tol);
        let check = fixed_point_orbit_check(&s_ctx, &v, &seq).unwrap();
        assert!(check.max_discrepancy < 1e-8, "{}", check.max_discrepancy);
        let u_ctx = PerronContext::unstable(&nc, engine, &p, 0.2, 25).unwrap();
        let y = (0.4 * u_ctx.radius).min(0.02);
        let u = DVector::from_column_slice(&[0.0, y]);
        let (useq, ures) = solve_unstable(&u_ctx, &u).unwrap();
        assert!(ures < tol().fp_tol);
        let uy = unstable_orbit_check(&u_ctx, &useq).unwrap();
        assert!(uy < 1e-9, "orbit identity {uy}");
    }
}
