//! Fast-growing spaces as limits of backward push-forwards, and the full
//! splitting they induce together with the slow filtration.
//!
//! The fast space at level i is the limit of pushing a bounded complement
//! (of the next slow space inside the current one, chosen at sigma^n p)
//! forward through the n-step product ending at p. Convergence is detected
//! as a small Grassmannian distance between iterates a stride apart, and the
//! limit's independence from the complement choice is re-verified with a
//! second, randomized complement policy.

use crate::base::BasePoint;
use crate::cocycle::{compose_forward, LinearCocycle};
use crate::config::ToleranceConfig;
use crate::error::{Error, Result};
use crate::geometry::{
    bounded_complement_with, grassmann_dist, projection_norm, volume, ComplementPolicy, Estimate,
    Subspace,
};
use crate::spectrum::{slow_space, LyapunovSpectrum};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// One push-forward iterate H~^n.
#[derive(Debug, Clone)]
pub struct PushforwardItem {
    pub n: usize,
    pub space: Subspace,
}

/// The sequence H~^n for a list of n, with unresolved n values skipped and
/// logged rather than failing the whole sequence.
#[derive(Debug, Clone)]
pub struct PushforwardSequence {
    pub level: usize,
    pub items: Vec<PushforwardItem>,
    pub skipped: Vec<(usize, String)>,
}

/// Sphere-to-sphere Grassmannian distance in the L2 chart, used for all
/// convergence decisions (final diagnostics re-measure in the fiber norm).
fn l2_sphere_dist(a: &Subspace, b: &Subspace) -> f64 {
    if a.dim() == 0 && b.dim() == 0 {
        return 0.0;
    }
    if a.dim() == 0 || b.dim() == 0 {
        return f64::INFINITY;
    }
    let one_sided = |from: &Subspace, to: &Subspace| -> f64 {
        if from.dim() > to.dim() {
            return (2.0f64).sqrt();
        }
        let cross = to.ortho().transpose() * from.ortho();
        let svd = cross.svd(false, false);
        let cos = svd
            .singular_values
            .iter()
            .fold(1.0f64, |m, s| m.min(*s))
            .clamp(0.0, 1.0);
        (2.0 - 2.0 * cos).max(0.0).sqrt()
    };
    one_sided(a, b).max(one_sided(b, a))
}

/// H~^n at p for one n: complement of the next slow space inside the current
/// Window length for the per-point filtration estimates used inside a push.
/// The parasitic fast component that survives one projection-and-step cycle
/// is exp(-gap * window) with gap the spectral gap directly above the level,
/// so the window is sized to keep that below a tenth of the convergence
/// tolerance, independent of the push length.
fn filtration_window(spec: &LyapunovSpectrum, level: usize, tol: &ToleranceConfig) -> usize {
    if level < 2 || level - 2 >= spec.mu.len() {
        return 40;
    }
    let above = spec.mu[level - 2];
    let here = if level - 1 < spec.mu.len() {
        spec.mu[level - 1]
    } else {
        f64::NEG_INFINITY
    };
    if here == f64::NEG_INFINITY {
        return 40;
    }
    let gap = (above - here).max(tol.group_gap);
    ((((10.0 / tol.d_h_tol).ln() / gap).ceil() as usize).min(600)).max(40)
}

/// one at sigma^n p, pushed through the n-step product ending at p.
fn pushforward_at(
    c: &LinearCocycle,
    p: &BasePoint,
    spec: &LyapunovSpectrum,
    level: usize,
    n: usize,
    tol: &ToleranceConfig,
    policy: ComplementPolicy,
) -> Result<Subspace> {
    let q = c.base.shift(p, -(n as i64));
    let n_filt = filtration_window(spec, level, tol);
    let f_here = slow_space(c, &q, spec, level, n_filt, tol)?;
    let f_next = slow_space(c, &q, spec, level + 1, n_filt, tol)?;
    let h = bounded_complement_with(&f_next, &f_here, tol, policy)?;
    if n == 0 {
        return Ok(h);
    }
    // Walk the push one step at a time, re-projecting the image onto the
    // slow space at each intermediate point. In exact arithmetic every
    // projection is the identity (the filtration is equivariant), but in
    // floating point each step reintroduces O(eps) components of the faster
    // directions, and a monolithic n-step product amplifies them past the
    // signal once exp((mu_1 - mu_level) n) exceeds 1/eps. Stripping them at
    // every point keeps the parasitic part uniformly small in n.
    let mut image = h.basis().clone();
    for j in (1..=n).rev() {
        let r = c.base.shift(p, -(j as i64));
        let a = c.matrix(&r)?;
        image = a * image;
        let next = c.base.shift(p, -(j as i64) + 1);
        let f_mid = slow_space(c, &next, spec, level, n_filt, tol)?;
        if f_mid.dim() < c.field.dim(&next) {
            let qf = f_mid.ortho();
            image = qf * (qf.transpose() * image);
        }
        for col in image.column_iter() {
            if col.norm() == 0.0 {
                return Err(Error::DependentBasis {
                    volume: 0.0,
                    threshold: tol.rank_tol,
                });
            }
        }
        // Re-orthonormalize so multi-dimensional levels keep a well
        // conditioned frame over long walks; the span is untouched.
        image = image.qr().q();
    }
    Subspace::new(c.field.fiber(p)?, image, tol)
}

/// The push-forward iterates H~^n for each requested n. Unresolved filtration
/// levels at individual n are skipped with a note; hard errors propagate.
pub fn pushforward_sequence(
    c: &LinearCocycle,
    p: &BasePoint,
    spec: &LyapunovSpectrum,
    level: usize,
    n_list: &[usize],
    tol: &ToleranceConfig,
    policy: ComplementPolicy,
) -> Result<PushforwardSequence> {
    check_level(spec, level, tol)?;
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for &n in n_list {
        match pushforward_at(c, p, spec, level, n, tol, policy) {
            Ok(space) => items.push(PushforwardItem { n, space }),
            Err(e @ Error::UnresolvedLevel { .. }) => skipped.push((n, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(PushforwardSequence {
        level,
        items,
        skipped,
    })
}

fn check_level(spec: &LyapunovSpectrum, level: usize, tol: &ToleranceConfig) -> Result<()> {
    if level == 0 || level > spec.levels() {
        return Err(Error::InvalidParameter(format!(
            "level {level} outside the {} resolved groups",
            spec.levels()
        )));
    }
    if spec.mu[level - 1] == f64::NEG_INFINITY {
        return Err(Error::InvalidParameter(
            "fast spaces at -infinity levels are not defined".into(),
        ));
    }
    if !spec.gap_resolved(level, tol.group_gap) {
        let gap = spec.mu[level - 1] - spec.mu[level];
        return Err(Error::UnresolvedLevel {
            level,
            gap,
            gap_min: tol.group_gap,
        });
    }
    Ok(())
}

/// A converged fast space with its convergence history.
#[derive(Debug, Clone)]
pub struct FastSpace {
    pub level: usize,
    pub space: Subspace,
    pub converged_n: usize,
    /// (n, d_H(H~^n, H~^{n+stride})) in the L2 chart.
    pub convergence_log: Vec<(usize, f64)>,
}

fn converge_pushforward(
    c: &LinearCocycle,
    p: &BasePoint,
    spec: &LyapunovSpectrum,
    level: usize,
    tol: &ToleranceConfig,
    policy: ComplementPolicy,
) -> Result<FastSpace> {
    let stride = tol.stride.max(1);
    let mut log: Vec<(usize, f64)> = Vec::new();
    let mut prev: Option<(usize, Subspace)> = None;
    let mut n = 0;
    while n <= tol.n_cap {
        match pushforward_at(c, p, spec, level, n, tol, policy) {
            Ok(cur) => {
                if let Some((pn, ps)) = prev.take() {
                    let d = l2_sphere_dist(&ps, &cur);
                    log.push((pn, d));
                    if d < tol.d_h_tol {
                        return Ok(FastSpace {
                            level,
                            space: ps,
                            converged_n: pn,
                            convergence_log: log,
                        });
                    }
                }
                prev = Some((n, cur));
            }
            Err(Error::UnresolvedLevel { .. }) => {
                // Skip this n; convergence is judged on the surviving ones.
                prev = None;
            }
            Err(e) => return Err(e),
        }
        n += stride;
    }
    let last = log.last().map(|(_, d)| *d).unwrap_or(f64::INFINITY);
    Err(Error::Unconverged {
        what: format!("fast space at level {level}"),
        steps: tol.n_cap,
        last,
        log,
    })
}

/// The fast space at `level`: the limit of the push-forward sequence,
/// accepted at the first iterate within d_H-tolerance of its successor and
/// cross-checked against an independently chosen complement policy.
pub fn fast_space(
    c: &LinearCocycle,
    p: &BasePoint,
    spec: &LyapunovSpectrum,
    level: usize,
    tol: &ToleranceConfig,
) -> Result<FastSpace> {
    check_level(spec, level, tol)?;
    let main = converge_pushforward(c, p, spec, level, tol, ComplementPolicy::OrthogonalFirst)?;
    let alt = converge_pushforward(
        c,
        p,
        spec,
        level,
        tol,
        ComplementPolicy::Randomized {
            salt: 0xC0FF_EE00 ^ level as u64,
        },
    )?;
    let agreement = l2_sphere_dist(&main.space, &alt.space);
    if agreement > 3.0 * tol.d_h_tol {
        return Err(Error::BoundViolated {
            what: format!("complement-independence of the fast space at level {level}"),
            value: agreement,
            bound: 3.0 * tol.d_h_tol,
        });
    }
    Ok(main)
}

/// Oblique projection norms onto and off the leading block at one level.
#[derive(Debug, Clone)]
pub struct LevelProjections {
    pub level: usize,
    /// Norm of the projector onto H^1 + ... + H^level along the rest.
    pub fast_along_slow: Estimate,
    /// Norm of the complementary projector.
    pub slow_along_fast: Estimate,
}

/// The assembled splitting at one base point.
#[derive(Debug, Clone)]
pub struct Splitting {
    pub base_point: BasePoint,
    pub fast: Vec<FastSpace>,
    pub slow_tail: Subspace,
    pub spectrum: LyapunovSpectrum,
    pub projection_norms: Vec<LevelProjections>,
}

impl Splitting {
    pub fn levels(&self) -> usize {
        self.fast.len()
    }

    /// Direct sum of the fast spaces up to `upto` (1-based, 0 gives zero).
    pub fn fast_join(&self, upto: usize, tol: &ToleranceConfig) -> Result<Subspace> {
        let fiber = self.slow_tail.fiber().clone();
        let mut acc = Subspace::zero(fiber);
        for fs in self.fast.iter().take(upto) {
            acc = Subspace::union(&acc, &fs.space, tol)?;
        }
        Ok(acc)
    }
}

/// Fast spaces for levels 1..=j plus the remaining slow tail, with joint
/// independence checked and projection norms recorded.
pub fn oseledets_splitting(
    c: &LinearCocycle,
    p: &BasePoint,
    spec: &LyapunovSpectrum,
    levels: usize,
    tol: &ToleranceConfig,
) -> Result<Splitting> {
    if levels > spec.levels() {
        return Err(Error::InvalidParameter(format!(
            "requested {levels} levels, spectrum has {}",
            spec.levels()
        )));
    }
    let fiber = c.field.fiber(p)?;
    let mut fast = Vec::with_capacity(levels);
    for level in 1..=levels {
        let fs = fast_space(c, p, spec, level, tol)?;
        if fs.space.dim() != spec.mult[level - 1] {
            return Err(Error::DimensionMismatch {
                context: format!("fast space dimension at level {level}"),
                expected: spec.mult[level - 1],
                got: fs.space.dim(),
            });
        }
        fast.push(fs);
    }
    // One level past the last group this is the residual space below
    // everything measured: zero on fibers fully covered by the spectrum,
    // the span of the unmeasured (dying) directions on larger fibers.
    let slow_tail = {
        let n_filt = fast
            .iter()
            .map(|f| f.converged_n)
            .max()
            .unwrap_or(0)
            .max(40);
        slow_space(c, p, spec, levels + 1, n_filt, tol)?
    };

    // Joint independence of all the pieces, measured as the fiber-norm volume
    // of the concatenated normalized bases.
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for fs in &fast {
        cols.extend(fs.space.columns());
    }
    cols.extend(slow_tail.columns());
    if !cols.is_empty() {
        let normalized: Vec<DVector<f64>> = cols
            .into_iter()
            .map(|v| {
                let n = crate::geometry::fiber_norm(&v, &fiber.norm)?;
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
    }

    let mut projection_norms = Vec::with_capacity(levels);
    for level in 1..=levels {
        let mut range = Subspace::zero(fiber.clone());
        for fs in fast.iter().take(level) {
            range = Subspace::union(&range, &fs.space, tol)?;
        }
        let mut kernel = slow_tail.clone();
        for fs in fast.iter().skip(level) {
            kernel = Subspace::union(&kernel, &fs.space, tol)?;
        }
        projection_norms.push(LevelProjections {
            level,
            fast_along_slow: projection_norm(&range, &kernel, tol)?,
            slow_along_fast: projection_norm(&kernel, &range, tol)?,
        });
    }

    Ok(Splitting {
        base_point: *p,
        fast,
        slow_tail,
        spectrum: spec.clone(),
        projection_norms,
    })
}

/// Per-level Grassmannian distance between the k-step push of the splitting
/// at its base point and an independently computed splitting at the shifted
/// point. Distances are measured in the fiber norm.
pub fn verify_equivariance(
    c: &LinearCocycle,
    at_p: &Splitting,
    at_q: &Splitting,
    tol: &ToleranceConfig,
) -> Result<Vec<Estimate>> {
    let p = at_p.base_point;
    let q = at_q.base_point;
    if p.system_id != q.system_id || p.seed != q.seed {
        return Err(Error::InvalidParameter(
            "equivariance check across different systems".into(),
        ));
    }
    if q.time < p.time {
        return Err(Error::InvalidParameter(
            "equivariance check needs the second splitting forward of the first".into(),
        ));
    }
    if at_p.levels() != at_q.levels() {
        return Err(Error::InvalidParameter(
            "equivariance check needs equal level counts".into(),
        ));
    }
    let k = (q.time - p.time) as usize;
    let prod = compose_forward(c, &p, k)?;
    let fiber_q = c.field.fiber(&q)?;
    let mut out = Vec::with_capacity(at_p.levels());
    for (fp, fq) in at_p.fast.iter().zip(&at_q.fast) {
        let mut image = &prod.scaled.matrix * fp.space.basis();
        for mut col in image.column_iter_mut() {
            let n = col.norm();
            if n == 0.0 {
                return Err(Error::DependentBasis {
                    volume: 0.0,
                    threshold: tol.rank_tol,
                });
            }
            col /= n;
        }
        let pushed = Subspace::new(fiber_q.clone(), image, tol)?;
        out.push(grassmann_dist(&pushed, &fq.space, tol)?);
    }
    Ok(out)
}

/// QR-compensated forward push of an orthonormal frame from sigma^n p to p,
/// returning the frame at p and the per-step upper-triangular transfers.
fn push_frame_from_past(
    c: &LinearCocycle,
    p: &BasePoint,
    n: usize,
    start_frame: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let mut w = start_frame.clone();
    let mut transfers = Vec::with_capacity(n);
    for j in 0..n {
        let q = c.base.shift(p, j as i64 - n as i64);
        let a = c.matrix(&q)?;
        let qr = (a * &w).qr();
        w = qr.q();
        transfers.push(qr.r());
    }
    Ok((w, transfers))
}

/// Backward-solve through the transfer chain: the log-norm of the preimage of
/// the coefficient vector `coeffs` under the pushed product.
fn backward_log_norm(transfers: &[DMatrix<f64>], coeffs: &DVector<f64>) -> Result<f64> {
    let mut y = coeffs.clone();
    let mut acc = 0.0f64;
    for r in transfers.iter().rev() {
        for i in 0..r.nrows() {
            if r[(i, i)] == 0.0 {
                return Err(Error::InvalidParameter(
                    "push-forward transfer is singular: restriction not invertible".into(),
                ));
            }
        }
        y = r
            .clone()
            .solve_upper_triangular(&y)
            .ok_or_else(|| {
                Error::InvalidParameter(
                    "push-forward transfer is singular: restriction not invertible".into(),
                )
            })?;
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        acc += norm.ln();
        y /= norm;
    }
    Ok(acc)
}

/// Forward and backward growth rates of the splitting's basis vectors.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub n: usize,
    /// Per level, per fast basis vector: (1/n) log of the forward image norm.
    pub forward: Vec<Vec<f64>>,
    /// Per level, per fast basis vector: (1/n) log of the preimage norm under
    /// the n-step product ending at the base point.
    pub backward: Vec<Vec<f64>>,
    /// Forward rates of the slow-tail basis vectors.
    pub slow_forward: Vec<f64>,
    /// Per level: how far the fast basis lies from the span pushed up from
    /// sigma^n p (should be tiny; large values signal a wrong space).
    pub backward_defect: Vec<f64>,
}

/// Forward growth rate of `x` measured in the slow cone of `level`: each
/// one-step image is re-projected onto the slow space at the current orbit
/// point. For a covariant vector the projection is asymptotically the
/// identity, but it strips the parasitic fast components that floating point
/// reintroduces every step; without it the measured rate of any non-leading
/// vector collapses onto mu_1 once the contamination outgrows the signal.
fn slow_projected_rate(
    c: &LinearCocycle,
    p: &BasePoint,
    x: &DVector<f64>,
    level: usize,
    spec: &LyapunovSpectrum,
    n: usize,
    tol: &ToleranceConfig,
) -> Result<f64> {
    let norm0 = x.norm();
    if norm0 == 0.0 {
        return Err(Error::EmptyInput("rate of the zero vector".into()));
    }
    let n_filt = filtration_window(spec, level, tol);
    let mut q = *p;
    let mut v = x / norm0;
    let mut acc = 0.0f64;
    for _ in 0..n {
        let a = c.matrix(&q)?;
        q = c.base.theta(&q);
        let mut y = a * &v;
        if level >= 2 {
            let s = slow_space(c, &q, spec, level, n_filt, tol)?;
            if s.dim() == 0 {
                return Ok(f64::NEG_INFINITY);
            }
            let so = s.ortho();
            y = so * (so.transpose() * &y);
        }
        let ny = y.norm();
        if ny == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        acc += ny.ln();
        v = y / ny;
    }
    Ok(acc / n as f64)
}

/// Rates of theorem-style growth for every basis vector: forward images
/// measured in the slow cone of their level, and preimages along the backward
/// orbit via per-step triangular solves through the pushed fast join. Within
/// the join of levels 1..=i the preimage of a level-i vector is the
/// backward-dominant one, so the solves stay accurate at any n; the
/// individual fast space pushed alone would collapse onto the top level.
pub fn verify_rates(
    c: &LinearCocycle,
    s: &Splitting,
    n: usize,
    tol: &ToleranceConfig,
) -> Result<RateReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("verify_rates needs n >= 1".into()));
    }
    let p = s.base_point;
    let q = c.base.shift(&p, -(n as i64));
    let mut forward = Vec::with_capacity(s.levels());
    let mut backward = Vec::with_capacity(s.levels());
    let mut backward_defect = Vec::with_capacity(s.levels());
    let mut past_join = Subspace::zero(c.field.fiber(&q)?);
    for fs in &s.fast {
        let mut fw = Vec::with_capacity(fs.space.dim());
        for col in fs.space.columns() {
            fw.push(slow_projected_rate(
                c,
                &p,
                &col,
                fs.level,
                &s.spectrum,
                n,
                tol,
            )?);
        }
        forward.push(fw);

        let past = fast_space(c, &q, &s.spectrum, fs.level, tol)?;
        past_join = Subspace::union(&past_join, &past.space, tol)?;
        let (w_end, transfers) = push_frame_from_past(c, &p, n, past_join.ortho())?;
        let mut bw = Vec::with_capacity(fs.space.dim());
        let mut defect = 0.0f64;
        for col in fs.space.columns() {
            let unit = &col / col.norm();
            let coeffs = w_end.transpose() * &unit;
            let resid = (&unit - &w_end * &coeffs).norm();
            defect = defect.max(resid);
            if resid > tol.restricted_image_tol {
                return Err(Error::ImageMismatch {
                    delta: resid,
                    tol: tol.restricted_image_tol,
                });
            }
            bw.push(backward_log_norm(&transfers, &coeffs)? / n as f64);
        }
        backward.push(bw);
        backward_defect.push(defect);
    }
    let tail_level = s.levels() + 1;
    let mut slow_forward = Vec::with_capacity(s.slow_tail.dim());
    for col in s.slow_tail.columns() {
        slow_forward.push(slow_projected_rate(
            c,
            &p,
            &col,
            tail_level,
            &s.spectrum,
            n,
            tol,
        )?);
    }
    Ok(RateReport {
        n,
        forward,
        backward,
        slow_forward,
        backward_defect,
    })
}

/// Forward and backward volume growth rates of the joint fast frame.
#[derive(Debug, Clone)]
pub struct VolumeSumReport {
    pub n: usize,
    pub forward_rate: f64,
    pub backward_rate: f64,
}

pub fn verify_volume_sums(
    c: &LinearCocycle,
    s: &Splitting,
    n: usize,
    tol: &ToleranceConfig,
) -> Result<VolumeSumReport> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "verify_volume_sums needs n >= 1".into(),
        ));
    }
    if s.fast.is_empty() {
        return Err(Error::EmptyInput("splitting has no fast levels".into()));
    }
    let p = s.base_point;
    let joint = s.fast_join(s.levels(), tol)?;
    let k = joint.dim();

    // Forward: push the actual concatenated basis; volumes telescope through
    // the per-step QR transfers.
    let qr0 = joint.basis().clone().qr();
    let mut base_log = 0.0;
    for i in 0..k {
        base_log += qr0.r()[(i, i)].abs().ln();
    }
    let mut w = qr0.q();
    let mut acc = 0.0f64;
    let mut q = p;
    for _ in 0..n {
        let a = c.matrix(&q)?;
        let qr = (a * &w).qr();
        w = qr.q();
        for i in 0..k {
            let rii = qr.r()[(i, i)].abs();
            if rii == 0.0 {
                return Err(Error::DependentBasis {
                    volume: 0.0,
                    threshold: tol.rank_tol,
                });
            }
            acc += rii.ln();
        }
        q = c.base.theta(&q);
    }
    let forward_rate = (acc + base_log) / n as f64;

    // Backward: the joint fast frame at sigma^n p pushed up to p; preimage
    // volumes are the negated transfer determinants, corrected by the
    // coefficient alignment with the splitting's own frame.
    let start = c.base.shift(&p, -(n as i64));
    let mut past = Subspace::zero(c.field.fiber(&start)?);
    for level in 1..=s.levels() {
        let fs = fast_space(c, &start, &s.spectrum, level, tol)?;
        past = Subspace::union(&past, &fs.space, tol)?;
    }
    if past.dim() != k {
        return Err(Error::DimensionMismatch {
            context: "joint fast frame at the backward point".into(),
            expected: k,
            got: past.dim(),
        });
    }
    let (w_end, transfers) = push_frame_from_past(c, &p, n, past.ortho())?;
    let mut det_log = 0.0f64;
    for r in &transfers {
        for i in 0..k {
            let rii = r[(i, i)].abs();
            if rii == 0.0 {
                return Err(Error::DependentBasis {
                    volume: 0.0,
                    threshold: tol.rank_tol,
                });
            }
            det_log += rii.ln();
        }
    }
    // Coefficients of the splitting's own orthonormal frame in the pushed one.
    let coeffs = w_end.transpose() * joint.ortho();
    let det_c = coeffs.determinant().abs();
    if det_c <= tol.rank_tol {
        return Err(Error::DependentBasis {
            volume: det_c,
            threshold: tol.rank_tol,
        });
    }
    let backward_rate = (det_c.ln() - det_log) / n as f64;

    Ok(VolumeSumReport {
        n,
        forward_rate,
        backward_rate,
    })
}

/// Caching provider of splitting data along an orbit, keyed by (time, kind,
/// level). One engine serves one cocycle and one spectrum; the manifold
/// operators query it at every orbit offset they touch.
pub struct SplittingEngine {
    pub cocycle: LinearCocycle,
    pub spectrum: LyapunovSpectrum,
    pub tol: ToleranceConfig,
    /// Product length for slow-space estimates.
    pub n_filt: usize,
    cache: Mutex<HashMap<(i64, u8, usize), Arc<Subspace>>>,
}

impl SplittingEngine {
    pub fn new(cocycle: LinearCocycle, spectrum: LyapunovSpectrum, tol: ToleranceConfig) -> Self {
        SplittingEngine {
            cocycle,
            spectrum,
            tol,
            n_filt: 40,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn cached<F>(&self, key: (i64, u8, usize), compute: F) -> Result<Arc<Subspace>>
    where
        F: FnOnce() -> Result<Subspace>,
    {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let value = Arc::new(compute()?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, value.clone());
        Ok(value)
    }

    /// Slow space F at `level` (1-based) at `p`; `levels() + 1` yields the
    /// residual space below everything the spectrum measured.
    pub fn slow(&self, p: &BasePoint, level: usize) -> Result<Arc<Subspace>> {
        self.cached((p.time, 0, level), || {
            slow_space(
                &self.cocycle,
                p,
                &self.spectrum,
                level,
                self.n_filt,
                &self.tol,
            )
        })
    }

    /// Direct sum of the fast spaces H^1..H^upto at `p` (zero if upto = 0).
    pub fn fast_join(&self, p: &BasePoint, upto: usize) -> Result<Arc<Subspace>> {
        self.cached((p.time, 1, upto), || {
            let mut acc = Subspace::zero(self.cocycle.field.fiber(p)?);
            for level in 1..=upto {
                let fs = fast_space(&self.cocycle, p, &self.spectrum, level, &self.tol)?;
                acc = Subspace::union(&acc, &fs.space, &self.tol)?;
            }
            Ok(acc)
        })
    }
}
