//! Lyapunov spectra from k-dimensional volume growth.
//!
//! Growth series are computed by QR-compensated frame propagation: a frame is
//! pushed one generator at a time and re-orthonormalized, and the telescoped
//! log R_ii sums give log-volumes of the pushed frame exactly. This keeps
//! every exponent readable even when singular-value ratios pass 1/eps, where
//! dense products silently lose the small directions. The frame is seeded
//! with the singular directions of a short pilot product so that invariant
//! coordinate axes cannot pin the propagation to a subdominant direction.
//!
//! All propagation runs in the L2 chart; the limits are norm-independent in
//! finite dimension. Fiber norms are used where single vectors are measured
//! (`vector_growth_rate`).

use crate::base::{BasePoint, BaseSystem};
use crate::cocycle::{compose_backward, compose_forward, LinearCocycle};
use crate::config::ToleranceConfig;
use crate::error::{Error, Result};
use crate::geometry::{fiber_norm, Subspace};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Orbit direction of a growth series: products anchored at p going forward,
/// or products ending at p whose base point recedes backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// The sequence (n, (1/n) log D_k) for one k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthSeries {
    pub k: usize,
    pub direction: Direction,
    pub values: Vec<(usize, f64)>,
}

/// Convergence status of one exponent estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentStatus {
    Resolved,
    /// Tail residual above the failure threshold: no number should be
    /// trusted, and none is reported silently.
    Undecided,
    /// Decreasing without bound (below the -infinity cutoff).
    MinusInfinity,
}

/// Per-k convergence diagnostics: least-squares tail slope (per step) and
/// maximum tail deviation from the reported value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumDiagnostics {
    pub slopes: Vec<f64>,
    pub residuals: Vec<f64>,
    pub tail_len: usize,
}

/// The estimated spectrum: cumulative sums Lambda_k, increments lambda_k,
/// grouped distinct exponents mu_i with multiplicities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Lambda_k = lambda_1 + ... + lambda_k (top-k sum), k = 1..k_max.
    #[serde(rename = "Lambda")]
    pub sums: Vec<f64>,
    /// Increments lambda_k = Lambda_k - Lambda_{k-1}.
    pub lambda: Vec<f64>,
    /// Distinct exponents, decreasing; a trailing -inf group collects all
    /// increments below the cutoff.
    pub mu: Vec<f64>,
    /// Multiplicity of each mu_i.
    pub mult: Vec<usize>,
    /// Cumulative multiplicities m~_i = m_1 + ... + m_i.
    pub mtilde: Vec<usize>,
    pub status: Vec<ExponentStatus>,
    pub diagnostics: SpectrumDiagnostics,
}

impl LyapunovSpectrum {
    pub fn k_max(&self) -> usize {
        self.sums.len()
    }

    pub fn levels(&self) -> usize {
        self.mu.len()
    }

    /// Codimension of the slow space at `level` (1-based): m~_{level-1}.
    pub fn codim_at_level(&self, level: usize) -> usize {
        if level <= 1 {
            0
        } else {
            self.mtilde[level - 2]
        }
    }

    /// True when the gap mu_level - mu_{level+1} is resolved (present and at
    /// least `gap`); the last level counts as resolved against -inf.
    pub fn gap_resolved(&self, level: usize, gap: f64) -> bool {
        if level == 0 || level > self.mu.len() {
            return false;
        }
        if level == self.mu.len() {
            return true;
        }
        let hi = self.mu[level - 1];
        let lo = self.mu[level];
        lo == f64::NEG_INFINITY || hi - lo >= gap
    }

    pub fn all_resolved(&self) -> bool {
        self.status.iter().all(|s| *s != ExponentStatus::Undecided)
    }
}

/// Orthonormalize the columns of `w` in place via thin QR, returning the
/// log |R_ii| increments (the volume bookkeeping of the compensation step).
fn reorthonormalize(w: &mut DMatrix<f64>) -> Vec<f64> {
    let k = w.ncols();
    let qr = w.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let mut logs = Vec::with_capacity(k);
    for i in 0..k {
        let rii = r[(i, i)].abs();
        logs.push(if rii > 0.0 { rii.ln() } else { f64::NEG_INFINITY });
    }
    *w = q;
    logs
}

/// Generator for step j of a propagation: forward uses A(theta^j p), backward
/// uses A(sigma^{j+1} p) transposed (products that end at p extend on the
/// left after transposition, which is what makes one-pass propagation valid).
fn step_matrix(
    c: &LinearCocycle,
    p: &BasePoint,
    j: usize,
    direction: Direction,
) -> Result<DMatrix<f64>> {
    match direction {
        Direction::Forward => c.matrix(&c.base.shift(p, j as i64)),
        Direction::Backward => Ok(c
            .matrix(&c.base.shift(p, -(j as i64) - 1))?
            .transpose()),
    }
}

/// Seed frame for the propagation: the k leading singular directions, on the
/// input side, of a short pilot product in the propagation direction.
fn pilot_frame(
    c: &LinearCocycle,
    p: &BasePoint,
    k: usize,
    n_max: usize,
    direction: Direction,
) -> Result<DMatrix<f64>> {
    let n0 = n_max.min(30).max(1);
    let m = match direction {
        Direction::Forward => compose_forward(c, p, n0)?.scaled.matrix,
        // The transposed backward product has the backward product's left
        // singular directions as its right (input-side) ones.
        Direction::Backward => compose_backward(c, p, n0)?.scaled.matrix.transpose(),
    };
    let (_, _, vt) = crate::geometry::svd_sorted(&m);
    if vt.nrows() < k {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the rank bound {} of the pilot product",
            vt.nrows()
        )));
    }
    Ok(vt.rows(0, k).transpose())
}

/// Growth series for every k = 1..=k_max in one propagation: the prefix sums
/// of the accumulated log R_ii are exactly the log-volumes of the leading
/// sub-frames.
pub fn growth_series_all(
    c: &LinearCocycle,
    p: &BasePoint,
    k_max: usize,
    n_max: usize,
    direction: Direction,
    _tol: &ToleranceConfig,
) -> Result<Vec<GrowthSeries>> {
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be >= 1".into()));
    }
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be >= 1".into()));
    }
    let d0 = c.field.dim(p);
    if k_max > d0 {
        return Err(Error::DimensionMismatch {
            context: "growth series frame".into(),
            expected: d0,
            got: k_max,
        });
    }
    let mut w = pilot_frame(c, p, k_max, n_max, direction)?;
    let mut acc = vec![0.0f64; k_max];
    let mut values: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(n_max); k_max];
    for j in 0..n_max {
        let a = step_matrix(c, p, j, direction)?;
        if a.nrows() < k_max {
            return Err(Error::DimensionMismatch {
                context: format!("growth series step {j}: fiber too small for frame"),
                expected: k_max,
                got: a.nrows(),
            });
        }
        w = &a * w;
        let logs = reorthonormalize(&mut w);
        let n = j + 1;
        let mut prefix = 0.0;
        for i in 0..k_max {
            acc[i] += logs[i];
            prefix += acc[i];
            values[i].push((n, prefix / n as f64));
        }
    }
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(i, vals)| GrowthSeries {
            k: i + 1,
            direction,
            values: vals,
        })
        .collect())
}

/// Single-k convenience wrapper around `growth_series_all`.
pub fn growth_series(
    c: &LinearCocycle,
    p: &BasePoint,
    k: usize,
    n_max: usize,
    direction: Direction,
    tol: &ToleranceConfig,
) -> Result<GrowthSeries> {
    let mut all = growth_series_all(c, p, k, n_max, direction, tol)?;
    Ok(all.remove(k - 1))
}

fn lsq_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Reduce per-k growth series to a spectrum: tail-average each series over
/// its last quarter, difference the sums into increments, and group the
/// increments into distinct exponents.
pub fn estimate_exponents(
    series: &[GrowthSeries],
    tol: &ToleranceConfig,
) -> Result<LyapunovSpectrum> {
    let k_max = series.len();
    if k_max == 0 {
        return Err(Error::EmptyInput("no growth series".into()));
    }
    for (i, s) in series.iter().enumerate() {
        if s.k != i + 1 {
            return Err(Error::InvalidParameter(
                "growth series must be ordered k = 1..k_max".into(),
            ));
        }
        if s.values.len() < 8 {
            return Err(Error::InvalidParameter(format!(
                "series for k = {} has {} values; need at least 8",
                s.k,
                s.values.len()
            )));
        }
    }

    let mut sums = Vec::with_capacity(k_max);
    let mut slopes = Vec::with_capacity(k_max);
    let mut residuals = Vec::with_capacity(k_max);
    let mut status = Vec::with_capacity(k_max);
    let mut tail_len = 0;
    for s in series {
        let len = s.values.len();
        let tail = &s.values[len - (len / 4).max(2)..];
        tail_len = tail.len();
        let finite: Vec<f64> = tail.iter().map(|(_, v)| *v).collect();
        let value = finite.iter().sum::<f64>() / finite.len() as f64;
        if !value.is_finite() {
            // Collapsed volumes: the series is identically -inf past some n.
            sums.push(f64::NEG_INFINITY);
            slopes.push(0.0);
            residuals.push(0.0);
            status.push(ExponentStatus::MinusInfinity);
            continue;
        }
        let residual = finite
            .iter()
            .fold(0.0f64, |m, v| m.max((v - value).abs()));
        let pts: Vec<(f64, f64)> = tail.iter().map(|(n, v)| (*n as f64, *v)).collect();
        let slope = lsq_slope(&pts);
        sums.push(value);
        slopes.push(slope);
        residuals.push(residual);
        status.push(if residual > tol.residual_fail {
            ExponentStatus::Undecided
        } else {
            ExponentStatus::Resolved
        });
    }

    let mut lambda = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let prev = if k == 0 { 0.0 } else { sums[k - 1] };
        let inc = if sums[k] == f64::NEG_INFINITY && prev == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            sums[k] - prev
        };
        lambda.push(inc);
        if inc <= tol.infinity_cut && status[k] == ExponentStatus::Resolved {
            status[k] = ExponentStatus::MinusInfinity;
        }
    }

    // Chain-group increments: adjacent lambda within group_gap share a mu;
    // everything at or below the cutoff joins one terminal -inf group.
    let mut mu = Vec::new();
    let mut mult = Vec::new();
    let mut group: Vec<f64> = Vec::new();
    let flush = |group: &mut Vec<f64>, mu: &mut Vec<f64>, mult: &mut Vec<usize>| {
        if group.is_empty() {
            return;
        }
        let m = group.len();
        let value = if group.iter().any(|v| !v.is_finite()) {
            f64::NEG_INFINITY
        } else {
            group.iter().sum::<f64>() / m as f64
        };
        mu.push(value);
        mult.push(m);
        group.clear();
    };
    let mut in_neg_inf = false;
    for &inc in &lambda {
        let is_bottom = inc <= tol.infinity_cut;
        if is_bottom {
            if !in_neg_inf {
                flush(&mut group, &mut mu, &mut mult);
                in_neg_inf = true;
            }
            group.push(f64::NEG_INFINITY);
            continue;
        }
        if let Some(&last) = group.last() {
            if (inc - last).abs() > tol.group_gap {
                flush(&mut group, &mut mu, &mut mult);
            }
        }
        group.push(inc);
    }
    flush(&mut group, &mut mu, &mut mult);

    let mut mtilde = Vec::with_capacity(mu.len());
    let mut running = 0;
    for m in &mult {
        running += m;
        mtilde.push(running);
    }

    Ok(LyapunovSpectrum {
        sums,
        lambda,
        mu,
        mult,
        mtilde,
        status,
        diagnostics: SpectrumDiagnostics {
            slopes,
            residuals,
            tail_len,
        },
    })
}

/// End-to-end convenience: series for k = 1..=k_max, then the reduction.
pub fn spectrum_of(
    c: &LinearCocycle,
    p: &BasePoint,
    k_max: usize,
    n_max: usize,
    direction: Direction,
    tol: &ToleranceConfig,
) -> Result<LyapunovSpectrum> {
    let series = growth_series_all(c, p, k_max, n_max, direction, tol)?;
    estimate_exponents(&series, tol)
}

/// Per-column log singular-value estimates of psi^n_p together with the
/// orthonormal frame of its leading right singular directions.
///
/// The frame is obtained by propagating a pilot-seeded frame through the
/// transposed generators in reverse orbit order (right singular directions of
/// the product are left singular directions of its transpose, which composes
/// in reverse). Each step handles one well-scaled generator, so directions
/// whose singular values differ by more than 1/eps survive.
fn leading_right_singular(
    c: &LinearCocycle,
    p: &BasePoint,
    n: usize,
    m: usize,
    tol: &ToleranceConfig,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n0 = n.min(30).max(1);
    // Pilot: the last n0 factors of psi^n_p; its left singular directions
    // approximate those of the full product at the far fiber.
    let tail_start = c.base.shift(p, (n - n0) as i64);
    let pilot = compose_forward(c, &tail_start, n0)?.scaled.matrix;
    let (_, u, _) = crate::geometry::svd_sorted(&pilot);
    if u.ncols() < m {
        return Err(Error::InvalidParameter(format!(
            "requested {m} singular directions, pilot affords {}",
            u.ncols()
        )));
    }
    let mut w = u.columns(0, m).into_owned();
    let mut acc = vec![0.0f64; m];
    let mut since_reorth = 0;
    for j in (0..n).rev() {
        let a = c.matrix(&c.base.shift(p, j as i64))?;
        w = a.transpose() * w;
        since_reorth += 1;
        if since_reorth == tol.reorth_every || j == 0 {
            for (i, l) in reorthonormalize(&mut w).into_iter().enumerate() {
                acc[i] += l;
            }
            since_reorth = 0;
        }
    }
    Ok((w, acc))
}

/// The slow space at `level` (1-based): vectors whose forward growth rate is
/// at most mu_level. Level 1 is the full fiber; deeper levels are the
/// orthocomplement (L2 chart) of the leading right singular directions of
/// psi^n_p, with codimension m~_{level-1}.
///
/// `level == levels() + 1` is also accepted: it is the residual space below
/// everything the spectrum measured, with codimension equal to the total
/// multiplicity. On fibers whose dimension equals that total it is the zero
/// subspace; on larger fibers (varying-dimension fields, where some
/// directions die under rank-deficient steps and no growth series can reach
/// them) it spans the unmeasured directions.
pub fn slow_space(
    c: &LinearCocycle,
    p: &BasePoint,
    spec: &LyapunovSpectrum,
    level: usize,
    n: usize,
    tol: &ToleranceConfig,
) -> Result<Subspace> {
    let fiber = c.field.fiber(p)?;
    if level == 0 {
        return Err(Error::InvalidParameter("levels are 1-based".into()));
    }
    if level == 1 {
        return Ok(Subspace::full(fiber));
    }
    if level > spec.levels() + 1 {
        return Err(Error::InvalidParameter(format!(
            "level {level} beyond the {} resolved groups",
            spec.levels()
        )));
    }
    let m = spec.codim_at_level(level);
    if m == fiber.dim && level == spec.levels() + 1 {
        return Ok(Subspace::zero(fiber));
    }
    if m >= fiber.dim {
        return Err(Error::InvalidParameter(format!(
            "slow space at level {level} would have codimension {m} >= dim {}",
            fiber.dim
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("slow_space needs n >= 1".into()));
    }
    // One extra column to measure the singular gap that separates the fast
    // directions from the rest. A +inf gap (directions that die outright
    // under a rank-deficient product) counts as resolved.
    let (w, logs) = leading_right_singular(c, p, n, m + 1, tol)?;
    let gap = (logs[m - 1] - logs[m]) / n as f64;
    if gap.is_nan() || gap < tol.singular_gap_min {
        return Err(Error::UnresolvedLevel {
            level,
            gap,
            gap_min: tol.singular_gap_min,
        });
    }
    let fast_dual = w.columns(0, m).into_owned();
    let residual = DMatrix::identity(fiber.dim, fiber.dim) - &fast_dual * fast_dual.transpose();
    // The residual projector has eigenvalue 1 exactly on the complement.
    let basis = crate::geometry::thin_orthonormal(&residual, 1e-6);
    if basis.ncols() != fiber.dim - m {
        return Err(Error::InvalidParameter(format!(
            "slow space complement rank {} != {}",
            basis.ncols(),
            fiber.dim - m
        )));
    }
    Ok(Subspace::new_unchecked(fiber, basis))
}

/// (1/n) log of the fiber norm of the n-step image of `x`. Forward applies
/// psi^n_p to x in E_p; backward applies psi^n_{sigma^n p} to x given in the
/// fiber at sigma^n p (the product that ends at p).
pub fn vector_growth_rate(
    c: &LinearCocycle,
    p: &BasePoint,
    x: &nalgebra::DVector<f64>,
    n: usize,
    direction: Direction,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("vector growth needs n >= 1".into()));
    }
    let start = match direction {
        Direction::Forward => *p,
        Direction::Backward => c.base.shift(p, -(n as i64)),
    };
    let fiber0 = c.field.fiber(&start)?;
    if x.len() != fiber0.dim {
        return Err(Error::DimensionMismatch {
            context: "vector_growth_rate input".into(),
            expected: fiber0.dim,
            got: x.len(),
        });
    }
    let n0 = fiber_norm(x, &fiber0.norm)?;
    if n0 == 0.0 {
        return Err(Error::InvalidParameter(
            "growth rate of the zero vector".into(),
        ));
    }
    let mut v = x / n0;
    let mut acc = n0.ln();
    let mut q = start;
    for _ in 0..n {
        let a = c.matrix(&q)?;
        v = &a * v;
        q = c.base.theta(&q);
        let norm = fiber_norm(&v, &c.field.fiber(&q)?.norm)?;
        if norm == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        acc += norm.ln();
        v /= norm;
    }
    Ok(acc / n as f64)
}

/// Least-squares slopes of log+ of a sampled quantity along both orbit
/// directions; tempered quantities have slopes near zero.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TemperednessReport {
    pub forward_slope: f64,
    pub backward_slope: f64,
}

pub fn temperedness_check<F>(
    base: &BaseSystem,
    p: &BasePoint,
    n_max: usize,
    mut sample_fn: F,
) -> Result<TemperednessReport>
where
    F: FnMut(&BasePoint) -> f64,
{
    if n_max < 2 {
        return Err(Error::InvalidParameter(
            "temperedness check needs n_max >= 2".into(),
        ));
    }
    let log_plus = |v: f64| if v > 1.0 { v.ln() } else { 0.0 };
    let mut fwd = Vec::with_capacity(n_max + 1);
    let mut bwd = Vec::with_capacity(n_max + 1);
    for j in 0..=n_max {
        let qf = base.shift(p, j as i64);
        let qb = base.shift(p, -(j as i64));
        fwd.push((j as f64, log_plus(sample_fn(&qf))));
        bwd.push((j as f64, log_plus(sample_fn(&qb))));
    }
    Ok(TemperednessReport {
        forward_slope: lsq_slope(&fwd),
        backward_slope: lsq_slope(&bwd),
    })
}
