//! Subspaces, oblique projectors, and Grassmannian distances.
//!
//! Subspace sphere-to-subspace and sphere-to-sphere distances follow the
//! asymmetric convention: delta(A, B) = sup over the unit sphere of A of the
//! distance to B, and the symmetric distance takes each sphere to the other
//! sphere (two lines at angle theta are 2 sin(theta/2) apart, not sin theta).
//! All of this is exact in L2 through principal angles; other norms fall back
//! to flagged multi-start search.

use super::search::{self, SearchBudget};
use super::{dist_to_span, svd_sorted, Estimate, Fiber, NormSpec};
use crate::config::ToleranceConfig;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// A subspace of a fiber, stored as an explicit basis plus an L2-orthonormal
/// chart basis for the same span.
#[derive(Debug, Clone)]
pub struct Subspace {
    fiber: Fiber,
    basis: DMatrix<f64>,
    ortho: DMatrix<f64>,
}

impl Subspace {
    /// Validated constructor: basis columns must be independent in the
    /// fiber's own volume measure (relative to the product of their norms).
    pub fn new(fiber: Fiber, basis: DMatrix<f64>, tol: &ToleranceConfig) -> Result<Self> {
        if basis.nrows() != fiber.dim {
            return Err(Error::DimensionMismatch {
                context: "subspace basis".into(),
                expected: fiber.dim,
                got: basis.nrows(),
            });
        }
        if !basis.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("subspace basis".into()));
        }
        if basis.ncols() > 0 {
            let cols: Vec<DVector<f64>> = (0..basis.ncols()).map(|j| basis.column(j).into_owned()).collect();
            let vol = super::volume(&cols, &fiber, tol)?;
            let scale: f64 = cols
                .iter()
                .map(|c| fiber.norm.eval_unchecked(c))
                .product();
            if vol <= tol.rank_tol * scale {
                return Err(Error::DependentBasis {
                    volume: vol,
                    threshold: tol.rank_tol * scale,
                });
            }
        }
        Ok(Self::new_unchecked(fiber, basis))
    }

    /// Construct without the independence check (internal prefix spans and
    /// other hot paths that tolerate near-dependence).
    pub(crate) fn new_unchecked(fiber: Fiber, basis: DMatrix<f64>) -> Self {
        let ortho = if basis.ncols() == 0 {
            DMatrix::zeros(fiber.dim, 0)
        } else {
            thin_orthonormal(&basis, 1e-13)
        };
        Subspace { fiber, basis, ortho }
    }

    pub fn from_columns(fiber: Fiber, cols: &[DVector<f64>], tol: &ToleranceConfig) -> Result<Self> {
        if cols.is_empty() {
            return Ok(Self::zero(fiber));
        }
        Self::new(fiber, DMatrix::from_columns(cols), tol)
    }

    pub fn zero(fiber: Fiber) -> Self {
        let d = fiber.dim;
        Subspace {
            fiber,
            basis: DMatrix::zeros(d, 0),
            ortho: DMatrix::zeros(d, 0),
        }
    }

    pub fn full(fiber: Fiber) -> Self {
        let d = fiber.dim;
        let id = DMatrix::identity(d, d);
        Subspace {
            fiber,
            basis: id.clone(),
            ortho: id,
        }
    }

    pub fn fiber(&self) -> &Fiber {
        &self.fiber
    }

    pub fn dim(&self) -> usize {
        self.ortho.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// L2-orthonormal basis of the same span (the computational chart).
    pub fn ortho(&self) -> &DMatrix<f64> {
        &self.ortho
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.basis.column(j).into_owned()
    }

    pub fn columns(&self) -> Vec<DVector<f64>> {
        (0..self.basis.ncols()).map(|j| self.column(j)).collect()
    }

    /// Chart membership test: relative L2 residual of x against the span.
    pub fn contains(&self, x: &DVector<f64>, rel_tol: f64) -> bool {
        if x.len() != self.fiber.dim {
            return false;
        }
        let nx = x.norm();
        if nx == 0.0 {
            return true;
        }
        if self.dim() == 0 {
            return false;
        }
        let r = x - &self.ortho * (self.ortho.transpose() * x);
        r.norm() <= rel_tol * nx
    }

    /// Concatenated span of two subspaces of the same fiber, validated.
    pub fn union(a: &Subspace, b: &Subspace, tol: &ToleranceConfig) -> Result<Subspace> {
        if a.fiber != b.fiber {
            return Err(Error::InvalidParameter(
                "subspace union across different fibers".into(),
            ));
        }
        let mut cols = a.columns();
        cols.extend(b.columns());
        Subspace::from_columns(a.fiber.clone(), &cols, tol)
    }
}

/// Orthonormal basis for the column span of `m` (columns with singular value
/// above `eps` times the largest).
pub(crate) fn thin_orthonormal(m: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let (sigma, u, _) = svd_sorted(m);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let rank = sigma.iter().filter(|&&s| s > eps * smax && s > 0.0).count();
    u.columns(0, rank).into_owned()
}

/// Oblique projector onto `range` along `kernel`, defined on their joint span
/// and extended by zero on the L2-orthogonal complement of that span.
#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: DMatrix<f64>,
    range: Subspace,
    kernel: Subspace,
}

impl Projector {
    pub fn new(range: &Subspace, kernel: &Subspace, tol: &ToleranceConfig) -> Result<Self> {
        if range.fiber() != kernel.fiber() {
            return Err(Error::InvalidParameter(
                "projector range and kernel live in different fibers".into(),
            ));
        }
        let d = range.fiber().dim;
        let p_dim = range.dim();
        let joint = Subspace::union(range, kernel, tol)?; // validates independence
        let m = {
            let mut cols = range.columns();
            cols.extend(kernel.columns());
            DMatrix::from_columns(&cols)
        };
        // P = R [I 0] M^+ with M = [R K]; pseudo-inverse restricted to span.
        let pinv = super::pseudo_inverse(&m, 1e-13);
        let mut selector = DMatrix::zeros(d, m.ncols());
        for (j, col) in range.columns().iter().enumerate() {
            selector.set_column(j, col);
        }
        let matrix = selector * pinv;
        let p = Projector {
            matrix,
            range: range.clone(),
            kernel: kernel.clone(),
        };
        // Contract checks: idempotent, identity on range, zero on kernel.
        let pp = &p.matrix * &p.matrix;
        let scale = 1.0f64.max(p.matrix.norm());
        if (&pp - &p.matrix).norm() > tol.idempotency_tol * scale {
            return Err(Error::BoundViolated {
                what: "projector idempotency defect".into(),
                value: (&pp - &p.matrix).norm(),
                bound: tol.idempotency_tol * scale,
            });
        }
        for col in range.columns() {
            if (&p.matrix * &col - &col).norm() > 1e-8 * (1.0 + col.norm()) {
                return Err(Error::BoundViolated {
                    what: "projector range fixing".into(),
                    value: (&p.matrix * &col - &col).norm(),
                    bound: 1e-8,
                });
            }
        }
        for col in kernel.columns() {
            if (&p.matrix * &col).norm() > 1e-8 * (1.0 + col.norm()) {
                return Err(Error::BoundViolated {
                    what: "projector kernel annihilation".into(),
                    value: (&p.matrix * &col).norm(),
                    bound: 1e-8,
                });
            }
        }
        debug_assert_eq!(joint.dim(), p_dim + kernel.dim());
        Ok(p)
    }

    pub fn range(&self) -> &Subspace {
        &self.range
    }

    pub fn kernel(&self) -> &Subspace {
        &self.kernel
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
}

/// Asymmetric subspace defect: sup over the unit sphere of `a` of the
/// distance to the subspace `b`. Exact in L2 via principal angles.
pub fn grassmann_delta(a: &Subspace, b: &Subspace, tol: &ToleranceConfig) -> Result<Estimate> {
    if a.fiber() != b.fiber() {
        return Err(Error::InvalidParameter(
            "grassmann_delta across different fibers".into(),
        ));
    }
    if a.dim() == 0 {
        return Ok(Estimate::exact(0.0));
    }
    if b.dim() == 0 {
        // Distance of any unit vector to the zero subspace is 1.
        return Ok(Estimate::exact(1.0));
    }
    if a.fiber().norm.is_l2() {
        if a.dim() > b.dim() {
            // Some unit vector of a is L2-orthogonal to all of b.
            return Ok(Estimate::exact(1.0));
        }
        let qa = a.ortho();
        let qb = b.ortho();
        let c = qa - qb * (qb.transpose() * qa);
        let (sigma, _, _) = svd_sorted(&c);
        return Ok(Estimate::exact(sigma[0].min(1.0)));
    }
    let basis = a.basis().clone();
    let norm = a.fiber().norm.clone();
    let budget = SearchBudget::full(tol.search_starts.min(32), tol.sign_vertex_dim_cap.min(10));
    let (val, _) = search::maximize_over_sphere(a.dim(), &NormSpec::L2, &budget, &[], &mut |c| {
        let x = &basis * c;
        let nx = norm.eval_unchecked(&x);
        if nx <= 1e-300 {
            return 0.0;
        }
        dist_to_span(&(x / nx), b, tol).unwrap_or(0.0)
    });
    Ok(Estimate::heuristic(val))
}

/// Symmetric sphere-to-sphere distance: max over both directions of the sup
/// over one unit sphere of the distance to the *other unit sphere*.
pub fn grassmann_dist(a: &Subspace, b: &Subspace, tol: &ToleranceConfig) -> Result<Estimate> {
    if a.fiber() != b.fiber() {
        return Err(Error::InvalidParameter(
            "grassmann_dist across different fibers".into(),
        ));
    }
    if a.dim() == 0 && b.dim() == 0 {
        return Ok(Estimate::exact(0.0));
    }
    if a.dim() == 0 || b.dim() == 0 {
        return Err(Error::EmptyInput(
            "grassmann_dist against a zero-dimensional subspace".into(),
        ));
    }
    if a.fiber().norm.is_l2() {
        let one_sided = |from: &Subspace, to: &Subspace| -> f64 {
            // sup_{unit u in from} min_{unit w in to} |u - w|
            //   = sqrt(2 - 2 cos(theta_max)), cos(theta_max) = min |P_to u|.
            // Evaluated as sqrt(2) sin / sqrt(1 + cos), with the sine taken
            // from the complementary product, so nearby subspaces do not lose
            // half the mantissa to the 2 - 2 cos cancellation.
            let cross = to.ortho().transpose() * from.ortho();
            let (cos, sin) = if from.dim() > to.dim() {
                (0.0, 1.0)
            } else {
                let (sigma, _, _) = svd_sorted(&cross);
                let cos = sigma.last().copied().unwrap_or(0.0).clamp(0.0, 1.0);
                let resid = from.ortho() - to.ortho() * &cross;
                let (rs, _, _) = svd_sorted(&resid);
                let sin = rs.first().copied().unwrap_or(0.0).clamp(0.0, 1.0);
                (cos, sin)
            };
            std::f64::consts::SQRT_2 * sin / (1.0 + cos).sqrt()
        };
        let d = one_sided(a, b).max(one_sided(b, a));
        return Ok(Estimate::exact(d));
    }
    // Heuristic nested search for non-L2 fibers.
    let norm = a.fiber().norm.clone();
    let one_sided = |from: &Subspace, to: &Subspace| -> f64 {
        let fb = from.basis().clone();
        let tb = to.basis().clone();
        let norm_outer = norm.clone();
        let norm_inner = norm.clone();
        let outer = SearchBudget {
            starts: tol.search_starts.min(12),
            vertex_cap: tol.sign_vertex_dim_cap.min(8),
            max_evals_per_start: 200,
        };
        let (val, _) = search::maximize_over_sphere(
            from.dim(),
            &NormSpec::L2,
            &outer,
            &[],
            &mut |c| {
                let x = &fb * c;
                let nx = norm_outer.eval_unchecked(&x);
                if nx <= 1e-300 {
                    return 0.0;
                }
                let u = x / nx;
                let tb = tb.clone();
                let norm_inner = norm_inner.clone();
                let u_inner = u.clone();
                let (dmin, _) = search::minimize_over_sphere(
                    tb.ncols(),
                    &NormSpec::L2,
                    &SearchBudget::inner(),
                    &[],
                    &mut |cb| {
                        let w = &tb * cb;
                        let nw = norm_inner.eval_unchecked(&w);
                        if nw <= 1e-300 {
                            return f64::INFINITY;
                        }
                        norm_inner.eval_unchecked(&(&u_inner - w / nw))
                    },
                );
                dmin
            },
        );
        val
    };
    let d = one_sided(a, b).max(one_sided(b, a));
    Ok(Estimate::heuristic(d))
}

/// How complements are chosen when splitting a flag level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComplementPolicy {
    /// L2-orthogonal complement inside the ambient subspace, random retries
    /// only if the projection bound fails.
    OrthogonalFirst,
    /// Deterministic pseudo-random candidates (salted), first one satisfying
    /// the projection bound wins. Exists to cross-check limit uniqueness.
    Randomized { salt: u64 },
}

/// Complement of `f` inside `ambient` whose projector along `f` satisfies the
/// dimension-based bound ||Pi|| <= sqrt(m) + 2, m = dim of the complement.
pub fn bounded_complement(
    f: &Subspace,
    ambient: &Subspace,
    tol: &ToleranceConfig,
) -> Result<Subspace> {
    bounded_complement_with(f, ambient, tol, ComplementPolicy::OrthogonalFirst)
}

pub fn bounded_complement_with(
    f: &Subspace,
    ambient: &Subspace,
    tol: &ToleranceConfig,
    policy: ComplementPolicy,
) -> Result<Subspace> {
    if f.fiber() != ambient.fiber() {
        return Err(Error::InvalidParameter(
            "bounded_complement across different fibers".into(),
        ));
    }
    if f.dim() > ambient.dim() {
        return Err(Error::InvalidParameter(
            "bounded_complement: subspace exceeds ambient".into(),
        ));
    }
    if f.dim() > 0 {
        let inside = grassmann_delta_l2_chart(f, ambient);
        if inside > 1e-7 {
            return Err(Error::InvalidParameter(format!(
                "bounded_complement: subspace leaves ambient by {inside:.3e}"
            )));
        }
    }
    let m = ambient.dim() - f.dim();
    if m == 0 {
        return Ok(Subspace::zero(f.fiber().clone()));
    }
    let bound = (m as f64).sqrt() + 2.0 + 1e-9;

    let orthogonal_candidate = || -> Result<Subspace> {
        if f.dim() == 0 {
            return Ok(ambient.clone());
        }
        let qf = f.ortho();
        let resid = ambient.ortho() - qf * (qf.transpose() * ambient.ortho());
        let h = thin_orthonormal(&resid, 1e-10);
        if h.ncols() != m {
            return Err(Error::DependentBasis {
                volume: 0.0,
                threshold: tol.rank_tol,
            });
        }
        Subspace::new(f.fiber().clone(), h, tol)
    };

    let check = |h: &Subspace| -> Result<f64> {
        Ok(projection_norm(h, f, tol)?.value)
    };

    let mut salt = match policy {
        ComplementPolicy::Randomized { salt } => salt,
        ComplementPolicy::OrthogonalFirst => 0,
    };
    let mut best: Option<(f64, Subspace)> = None;

    if matches!(policy, ComplementPolicy::OrthogonalFirst) {
        let h = orthogonal_candidate()?;
        let norm = check(&h)?;
        if norm <= bound {
            return Ok(h);
        }
        best = Some((norm, h));
    }

    for _ in 0..tol.complement_max_tries {
        let cand = random_complement_candidate(ambient, m, salt);
        salt = salt.wrapping_add(1);
        let Ok(h) = Subspace::new(f.fiber().clone(), cand, tol) else {
            continue;
        };
        // Complement must be independent of f inside ambient.
        if Subspace::union(&h, f, tol).is_err() {
            continue;
        }
        let Ok(norm) = check(&h) else { continue };
        if norm <= bound {
            return Ok(h);
        }
        if best.as_ref().map(|(b, _)| norm < *b).unwrap_or(true) {
            best = Some((norm, h));
        }
    }
    let value = best.map(|(v, _)| v).unwrap_or(f64::INFINITY);
    Err(Error::BoundViolated {
        what: "bounded complement projection norm".into(),
        value,
        bound,
    })
}

/// L2-chart containment defect of f inside ambient.
fn grassmann_delta_l2_chart(f: &Subspace, ambient: &Subspace) -> f64 {
    if f.dim() == 0 {
        return 0.0;
    }
    let qa = ambient.ortho();
    let c = f.ortho() - qa * (qa.transpose() * f.ortho());
    let (sigma, _, _) = svd_sorted(&c);
    sigma.first().copied().unwrap_or(0.0)
}

/// Deterministic salted random m-column frame inside the ambient chart.
fn random_complement_candidate(ambient: &Subspace, m: usize, salt: u64) -> DMatrix<f64> {
    let s = ambient.dim();
    let mut state = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5A5_A5A5_5A5A_5A5A;
    let mut next = || {
        state ^= state >> 12;
        state ^= state << 25;
        state ^= state >> 27;
        (state.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11) as f64 * (2.0 / (1u64 << 53) as f64) - 1.0
    };
    let coeff = DMatrix::from_fn(s, m, |_, _| next());
    ambient.ortho() * coeff
}

/// Operator norm of the oblique projector onto `range` along `kernel`,
/// measured on their joint span in the fiber norm. Exact for L2.
pub fn projection_norm(
    range: &Subspace,
    kernel: &Subspace,
    tol: &ToleranceConfig,
) -> Result<Estimate> {
    if range.dim() == 0 {
        return Ok(Estimate::exact(0.0));
    }
    let p = Projector::new(range, kernel, tol)?;
    let span = Subspace::union(range, kernel, tol)?;
    if range.fiber().norm.is_l2() {
        let q = span.ortho();
        let restricted = q.transpose() * &p.matrix * q;
        let (sigma, _, _) = svd_sorted(&restricted);
        return Ok(Estimate::exact(sigma[0]));
    }
    let norm = range.fiber().norm.clone();
    let basis = span.ortho().clone();
    let budget = SearchBudget::full(tol.search_starts.min(32), tol.sign_vertex_dim_cap.min(10));
    let pm = p.matrix.clone();
    let (val, _) = search::maximize_over_sphere(
        span.dim(),
        &NormSpec::L2,
        &budget,
        &[],
        &mut |c| {
            let x = &basis * c;
            let nx = norm.eval_unchecked(&x);
            if nx <= 1e-300 {
                return 0.0;
            }
            norm.eval_unchecked(&(&pm * &x)) / nx
        },
    );
    Ok(Estimate::heuristic(val))
}
