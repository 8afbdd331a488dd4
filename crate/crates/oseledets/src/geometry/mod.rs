//! Normed fibers and the volume-growth functionals.
//!
//! A fiber is R^d equipped with one of four norms. Distances from a vector to
//! a subspace are exact for L2 (orthogonal projection) and for the polyhedral
//! norms (linear programming with a certified duality gap). The k-dimensional
//! growth functional `dk_of_map` is exact where a closed form exists and is
//! otherwise a lower bound from multi-start search, reported with
//! `Estimate::exact == false`.
//!
//! Volume convention: Vol(x1..xk) = ||x1|| * prod_{i>=2} dist(x_i,
//! span(x_1..x_{i-1})), evaluated left to right in the fiber norm.

mod search;
mod simplex;
mod subspace;

pub use subspace::{
    bounded_complement, bounded_complement_with, grassmann_delta, grassmann_dist, projection_norm,
    ComplementPolicy, Projector, Subspace,
};
pub(crate) use subspace::thin_orthonormal;

use crate::config::ToleranceConfig;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Which norm a fiber carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormSpec {
    L2,
    L1,
    Linf,
    /// max_i w_i |x_i| with strictly positive weights.
    WeightedSup { weights: Vec<f64> },
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec::L2
    }
}

impl NormSpec {
    /// Check the spec is usable on vectors of length `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let NormSpec::WeightedSup { weights } = self {
            if weights.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "weighted sup norm".into(),
                    expected: dim,
                    got: weights.len(),
                });
            }
            if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidParameter(
                    "weighted sup norm requires finite positive weights".into(),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn eval_unchecked(&self, x: &DVector<f64>) -> f64 {
        match self {
            NormSpec::L2 => x.norm(),
            NormSpec::L1 => x.iter().map(|v| v.abs()).sum(),
            NormSpec::Linf => x.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            NormSpec::WeightedSup { weights } => x
                .iter()
                .zip(weights)
                .fold(0.0f64, |m, (v, w)| m.max(w * v.abs())),
        }
    }

    pub fn is_l2(&self) -> bool {
        matches!(self, NormSpec::L2)
    }

    /// Dual norm among the supported kinds; weighted sup norms are first
    /// reduced to Linf by diagonal rescaling (see `dual_dk`).
    fn dual_of_plain(&self) -> Option<NormSpec> {
        match self {
            NormSpec::L2 => Some(NormSpec::L2),
            NormSpec::L1 => Some(NormSpec::Linf),
            NormSpec::Linf => Some(NormSpec::L1),
            NormSpec::WeightedSup { .. } => None,
        }
    }
}

/// A finite-dimensional normed fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fiber {
    pub dim: usize,
    pub norm: NormSpec,
}

impl Fiber {
    pub fn new(dim: usize, norm: NormSpec) -> Result<Self> {
        norm.validate(dim)?;
        Ok(Fiber { dim, norm })
    }

    pub fn l2(dim: usize) -> Self {
        Fiber {
            dim,
            norm: NormSpec::L2,
        }
    }
}

/// A numeric value together with an exactness marker. `exact == false` means
/// the value is a certified lower bound (suprema) or best-effort estimate
/// (infima) from multi-start search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub exact: bool,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, exact: true }
    }

    pub fn heuristic(value: f64) -> Self {
        Estimate {
            value,
            exact: false,
        }
    }
}

fn check_vector(x: &DVector<f64>, norm: &NormSpec, context: &str) -> Result<()> {
    norm.validate(x.len())?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(context.into()));
    }
    Ok(())
}

/// Norm of `x` under `norm`.
pub fn fiber_norm(x: &DVector<f64>, norm: &NormSpec) -> Result<f64> {
    check_vector(x, norm, "fiber_norm input")?;
    Ok(norm.eval_unchecked(x))
}

/// Distance from `x` to the span of `s` in the fiber norm of `s`.
///
/// L2 distances come from orthogonal projection; L1/Linf (and weighted sup,
/// after diagonal rescaling) are linear programs solved to a duality gap
/// below the configured tolerance.
pub fn dist_to_span(x: &DVector<f64>, s: &Subspace, tol: &ToleranceConfig) -> Result<f64> {
    let fiber = s.fiber();
    if x.len() != fiber.dim {
        return Err(Error::DimensionMismatch {
            context: "dist_to_span".into(),
            expected: fiber.dim,
            got: x.len(),
        });
    }
    check_vector(x, &fiber.norm, "dist_to_span input")?;
    if s.dim() == 0 {
        return Ok(fiber.norm.eval_unchecked(x));
    }
    match &fiber.norm {
        NormSpec::L2 => {
            let q = s.ortho();
            let r = x - q * (q.transpose() * x);
            Ok(r.norm())
        }
        NormSpec::L1 => dist_lp(x, s.basis(), false, tol),
        NormSpec::Linf => dist_lp(x, s.basis(), true, tol),
        NormSpec::WeightedSup { weights } => {
            let xs = DVector::from_fn(x.len(), |i, _| weights[i] * x[i]);
            let mut bs = s.basis().clone();
            for i in 0..bs.nrows() {
                for j in 0..bs.ncols() {
                    bs[(i, j)] *= weights[i];
                }
            }
            dist_lp(&xs, &bs, true, tol)
        }
    }
}

/// min_t ||x - B t|| in L1 (`sup_form == false`) or Linf (`true`), as an LP.
fn dist_lp(x: &DVector<f64>, b: &DMatrix<f64>, sup_form: bool, tol: &ToleranceConfig) -> Result<f64> {
    let d = x.len();
    let k = b.ncols();
    if sup_form {
        // Variables (t+, t-, s, u, v) >= 0, rows:
        //   B t - s + u = x      (componentwise  B t - s <= x)
        //  -B t - s + v = -x     (componentwise -B t - s <= -x)
        let n = 2 * k + 1 + 2 * d;
        let mut a = DMatrix::zeros(2 * d, n);
        let mut rhs = DVector::zeros(2 * d);
        for i in 0..d {
            for j in 0..k {
                a[(i, j)] = b[(i, j)];
                a[(i, k + j)] = -b[(i, j)];
                a[(d + i, j)] = -b[(i, j)];
                a[(d + i, k + j)] = b[(i, j)];
            }
            a[(i, 2 * k)] = -1.0;
            a[(d + i, 2 * k)] = -1.0;
            a[(i, 2 * k + 1 + i)] = 1.0;
            a[(d + i, 2 * k + 1 + d + i)] = 1.0;
            rhs[i] = x[i];
            rhs[d + i] = -x[i];
        }
        let mut c = DVector::zeros(n);
        c[2 * k] = 1.0;
        let sol = simplex::solve_lp(&a, &rhs, &c, tol.duality_gap_tol)?;
        Ok(sol.objective.max(0.0))
    } else {
        // Variables (t+, t-, r+, r-) >= 0, rows: B t + r+ - r- = x,
        // minimizing sum(r+ + r-).
        let n = 2 * k + 2 * d;
        let mut a = DMatrix::zeros(d, n);
        for i in 0..d {
            for j in 0..k {
                a[(i, j)] = b[(i, j)];
                a[(i, k + j)] = -b[(i, j)];
            }
            a[(i, 2 * k + i)] = 1.0;
            a[(i, 2 * k + d + i)] = -1.0;
        }
        let mut c = DVector::zeros(n);
        for j in 2 * k..n {
            c[j] = 1.0;
        }
        let sol = simplex::solve_lp(&a, &x.clone(), &c, tol.duality_gap_tol)?;
        Ok(sol.objective.max(0.0))
    }
}

/// Volume of an ordered tuple of vectors in `fiber`:
/// ||x1|| * prod dist(x_i, span of the previous ones).
pub fn volume(vectors: &[DVector<f64>], fiber: &Fiber, tol: &ToleranceConfig) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput("volume of an empty tuple".into()));
    }
    for v in vectors {
        if v.len() != fiber.dim {
            return Err(Error::DimensionMismatch {
                context: "volume".into(),
                expected: fiber.dim,
                got: v.len(),
            });
        }
        check_vector(v, &fiber.norm, "volume input")?;
    }
    let mut vol = fiber.norm.eval_unchecked(&vectors[0]);
    for i in 1..vectors.len() {
        let prefix = DMatrix::from_columns(&vectors[..i]);
        let span = Subspace::new_unchecked(fiber.clone(), prefix);
        vol *= dist_to_span(&vectors[i], &span, tol)?;
    }
    Ok(vol)
}

/// Singular values of `m` in decreasing order, with matching U columns and
/// V^T rows.
///
/// Computed by cyclic one-sided Jacobi rather than nalgebra's SVD: the
/// vector-accumulating Golub-Kahan path there can lose ~1e-4 of absolute
/// accuracy in the singular values of rank-deficient matrices, which the
/// exact-path guarantees in this module cannot tolerate. Jacobi keeps every
/// singular value and vector at machine precision at the small sizes handled
/// here.
pub(crate) fn svd_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    if m.nrows() >= m.ncols() {
        jacobi_svd_tall(m)
    } else {
        let (sigma, u, vt) = jacobi_svd_tall(&m.transpose());
        (sigma, vt.transpose(), u.transpose())
    }
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff,
/// built on the same accurate SVD as everything else in this module.
pub(crate) fn pseudo_inverse(m: &DMatrix<f64>, rel_eps: f64) -> DMatrix<f64> {
    let (sigma, u, vt) = svd_sorted(m);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let r = sigma.len();
    let mut scaled = DMatrix::zeros(m.ncols(), r);
    for (i, &s) in sigma.iter().enumerate() {
        if s > rel_eps * smax && s > 0.0 {
            scaled.set_column(i, &(vt.row(i).transpose() / s));
        }
    }
    scaled * u.transpose()
}

fn jacobi_svd_tall(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    debug_assert!(rows >= cols);
    if cols == 0 {
        return (Vec::new(), DMatrix::zeros(rows, 0), DMatrix::zeros(0, 0));
    }
    let mut b = m.clone();
    let mut v = DMatrix::identity(cols, cols);
    for _sweep in 0..60 {
        // A rank-deficient direction never reaches exact zero through
        // rotations alone: it shrinks to rounding residue parallel to the
        // surviving columns and the relative-cosine test below then keeps
        // firing forever. Flatten such columns to exact zeros; everything
        // downstream treats singular values under eps * sigma_max as rank
        // deficiency anyway.
        let max_norm = (0..cols).map(|j| b.column(j).norm()).fold(0.0, f64::max);
        let floor = f64::EPSILON * max_norm;
        if floor > 0.0 {
            for j in 0..cols {
                if b.column(j).norm() < floor {
                    for i in 0..rows {
                        b[(i, j)] = 0.0;
                    }
                }
            }
        }
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let app = b.column(p).norm_squared();
                let aqq = b.column(q).norm_squared();
                let apq = b.column(p).dot(&b.column(q));
                if apq == 0.0 || apq.abs() <= 1e-15 * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let xp = b[(i, p)];
                    let xq = b[(i, q)];
                    b[(i, p)] = c * xp - s * xq;
                    b[(i, q)] = s * xp + c * xq;
                }
                for i in 0..cols {
                    let xp = v[(i, p)];
                    let xq = v[(i, q)];
                    v[(i, p)] = c * xp - s * xq;
                    v[(i, q)] = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| b.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b2| norms[b2].total_cmp(&norms[a]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u = DMatrix::zeros(rows, cols);
    let mut v_sorted = DMatrix::zeros(cols, cols);
    for (slot, &j) in order.iter().enumerate() {
        v_sorted.set_column(slot, &v.column(j));
        if norms[j] > 0.0 {
            u.set_column(slot, &(b.column(j) / norms[j]));
        }
    }
    // Columns with an exactly zero singular value carry no direction; fill
    // them with an orthonormal completion so U stays orthonormal throughout.
    for slot in 0..cols {
        if sigma[slot] > 0.0 {
            continue;
        }
        'candidates: for e in 0..rows {
            let mut cand = DVector::zeros(rows);
            cand[e] = 1.0;
            for _pass in 0..2 {
                for k in 0..cols {
                    if k == slot {
                        continue;
                    }
                    let uk = u.column(k).into_owned();
                    let coeff = uk.dot(&cand);
                    cand -= coeff * uk;
                }
            }
            if cand.norm() > 0.5 {
                u.set_column(slot, &(&cand / cand.norm()));
                break 'candidates;
            }
        }
    }
    (sigma, u, v_sorted.transpose())
}

/// Greatest growth of k-volumes under the linear map `a`:
/// sup Vol(a x_1, ..., a x_k) over unit frames of the input fiber.
///
/// Exact cases: L2 -> L2 (product of the k largest singular values), k = 1
/// with an enumerable input ball (L1 always; Linf and weighted sup up to the
/// configured dimension cap), and k = 1 from L2 into a sup-type norm (largest
/// weighted row norm). Everything else is a multi-start lower bound flagged
/// heuristic.
pub fn dk_of_map(
    a: &DMatrix<f64>,
    norm_in: &NormSpec,
    norm_out: &NormSpec,
    k: usize,
    tol: &ToleranceConfig,
) -> Result<Estimate> {
    norm_in.validate(a.ncols())?;
    norm_out.validate(a.nrows())?;
    if k == 0 {
        return Err(Error::InvalidParameter("dk_of_map needs k >= 1".into()));
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("dk_of_map matrix".into()));
    }
    if k > a.ncols() || k > a.nrows() {
        // Any k-tuple of inputs (or their images) is linearly dependent.
        return Ok(Estimate::exact(0.0));
    }
    if norm_in.is_l2() && norm_out.is_l2() {
        let (sigma, _, _) = svd_sorted(a);
        return Ok(Estimate::exact(sigma[..k].iter().product()));
    }
    if k == 1 {
        match norm_in {
            NormSpec::L1 => {
                // Extreme points of the L1 ball are the signed axes.
                let mut best = 0.0f64;
                for j in 0..a.ncols() {
                    best = best.max(norm_out.eval_unchecked(&a.column(j).into_owned()));
                }
                return Ok(Estimate::exact(best));
            }
            NormSpec::L2 => match norm_out {
                NormSpec::Linf => {
                    let mut best = 0.0f64;
                    for i in 0..a.nrows() {
                        best = best.max(a.row(i).norm());
                    }
                    return Ok(Estimate::exact(best));
                }
                NormSpec::WeightedSup { weights } => {
                    let mut best = 0.0f64;
                    for i in 0..a.nrows() {
                        best = best.max(weights[i] * a.row(i).norm());
                    }
                    return Ok(Estimate::exact(best));
                }
                _ => {}
            },
            NormSpec::Linf => {
                if a.ncols() <= tol.sign_vertex_dim_cap {
                    return Ok(Estimate::exact(sign_vertex_sup(a, norm_out, None)));
                }
            }
            NormSpec::WeightedSup { weights } => {
                if a.ncols() <= tol.sign_vertex_dim_cap {
                    return Ok(Estimate::exact(sign_vertex_sup(a, norm_out, Some(weights))));
                }
            }
        }
    }
    Ok(Estimate::heuristic(dk_search(a, norm_in, norm_out, k, tol)?))
}

/// Exact sup of ||A x||_out over the vertices of the (weighted) sup-norm unit
/// ball: convex maximum attained at an extreme point.
fn sign_vertex_sup(a: &DMatrix<f64>, norm_out: &NormSpec, weights: Option<&[f64]>) -> f64 {
    let d = a.ncols();
    let mut best = 0.0f64;
    for mask in 0..(1u64 << d) {
        let v = DVector::from_fn(d, |i, _| {
            let s = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
            match weights {
                Some(w) => s / w[i],
                None => s,
            }
        });
        best = best.max(norm_out.eval_unchecked(&(a * v)));
    }
    best
}

/// Multi-start block-coordinate ascent for D_k: each frame vector is refined
/// by a sphere search holding the others fixed. The L2 right-singular frame
/// seeds the search.
fn dk_search(
    a: &DMatrix<f64>,
    norm_in: &NormSpec,
    norm_out: &NormSpec,
    k: usize,
    tol: &ToleranceConfig,
) -> Result<f64> {
    let d_in = a.ncols();
    let out_fiber = Fiber {
        dim: a.nrows(),
        norm: norm_out.clone(),
    };
    let vol_of = |frame: &[DVector<f64>], tol: &ToleranceConfig| -> f64 {
        let images: Vec<DVector<f64>> = frame.iter().map(|x| a * x).collect();
        volume(&images, &out_fiber, tol).unwrap_or(0.0)
    };

    // Seed frames: L2 right-singular directions, then deterministic fills.
    let (_, _, vt) = svd_sorted(a);
    let budget = search::SearchBudget::full(tol.search_starts.min(24), tol.sign_vertex_dim_cap.min(8));
    let mut seeds: Vec<Vec<DVector<f64>>> = Vec::new();
    let svd_frame: Vec<DVector<f64>> = (0..k)
        .map(|i| {
            let v = vt.row(i).transpose();
            let n = norm_in.eval_unchecked(&v);
            if n > 0.0 {
                v / n
            } else {
                v
            }
        })
        .collect();
    seeds.push(svd_frame);
    let base_starts = search::sphere_starts(d_in, norm_in, &budget);
    for chunk in base_starts.chunks(k) {
        if chunk.len() == k && seeds.len() < 8 {
            seeds.push(chunk.to_vec());
        }
    }

    let inner = search::SearchBudget {
        starts: 10,
        vertex_cap: tol.sign_vertex_dim_cap.min(8),
        max_evals_per_start: 250,
    };
    let mut best = 0.0f64;
    for seed in seeds {
        let mut frame = seed;
        for _sweep in 0..2 {
            for i in 0..k {
                let frozen: Vec<DVector<f64>> = frame.clone();
                let current = frame[i].clone();
                let (_, w) = search::maximize_over_sphere(
                    d_in,
                    norm_in,
                    &inner,
                    &[current],
                    &mut |x| {
                        let mut cand = frozen.clone();
                        cand[i] = x.clone();
                        vol_of(&cand, tol)
                    },
                );
                frame[i] = w;
            }
        }
        best = best.max(vol_of(&frame, tol));
    }
    Ok(best)
}

/// D_k of the adjoint map with the dual norms. Weighted sup fibers are
/// reduced to Linf by the isometry x -> diag(w) x before dualizing.
pub fn dual_dk(
    a: &DMatrix<f64>,
    norm_in: &NormSpec,
    norm_out: &NormSpec,
    k: usize,
    tol: &ToleranceConfig,
) -> Result<Estimate> {
    norm_in.validate(a.ncols())?;
    norm_out.validate(a.nrows())?;
    let mut m = a.clone();
    let plain_in = match norm_in {
        NormSpec::WeightedSup { weights } => {
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    m[(i, j)] /= weights[j];
                }
            }
            NormSpec::Linf
        }
        other => other.clone(),
    };
    let plain_out = match norm_out {
        NormSpec::WeightedSup { weights } => {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] *= weights[i];
                }
            }
            NormSpec::Linf
        }
        other => other.clone(),
    };
    let dual_in = plain_in.dual_of_plain().expect("plain norm has a dual");
    let dual_out = plain_out.dual_of_plain().expect("plain norm has a dual");
    dk_of_map(&m.transpose(), &dual_out, &dual_in, k, tol)
}

/// Operator norm of `a` restricted to a subspace: sup of the output norm over
/// unit vectors of `s`. Exact in the all-L2 case via the orthonormal chart.
pub fn restricted_operator_norm(
    a: &DMatrix<f64>,
    s: &Subspace,
    norm_out: &NormSpec,
    tol: &ToleranceConfig,
) -> Result<Estimate> {
    if a.ncols() != s.fiber().dim {
        return Err(Error::DimensionMismatch {
            context: "restricted_operator_norm".into(),
            expected: s.fiber().dim,
            got: a.ncols(),
        });
    }
    norm_out.validate(a.nrows())?;
    if s.dim() == 0 {
        return Ok(Estimate::exact(0.0));
    }
    if s.fiber().norm.is_l2() && norm_out.is_l2() {
        let m = a * s.ortho();
        let (sigma, _, _) = svd_sorted(&m);
        return Ok(Estimate::exact(sigma[0]));
    }
    // Parameterize the unit sphere of s by coefficients; heuristic search.
    let basis = s.basis().clone();
    let in_norm = s.fiber().norm.clone();
    let budget = search::SearchBudget::full(tol.search_starts.min(32), tol.sign_vertex_dim_cap.min(10));
    let (val, _) = search::maximize_over_sphere(
        s.dim(),
        &NormSpec::L2,
        &budget,
        &[],
        &mut |c| {
            let x = &basis * c;
            let nx = in_norm.eval_unchecked(&x);
            if nx <= 1e-300 {
                return 0.0;
            }
            norm_out.eval_unchecked(&(a * &x)) / nx
        },
    );
    Ok(Estimate::heuristic(val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    #[test]
    fn norms_agree_on_simple_vectors() {
        let x = DVector::from_vec(vec![3.0, -4.0]);
        assert_eq!(fiber_norm(&x, &NormSpec::L2).unwrap(), 5.0);
        assert_eq!(fiber_norm(&x, &NormSpec::L1).unwrap(), 7.0);
        assert_eq!(fiber_norm(&x, &NormSpec::Linf).unwrap(), 4.0);
        let w = NormSpec::WeightedSup {
            weights: vec![2.0, 0.5],
        };
        assert_eq!(fiber_norm(&x, &w).unwrap(), 6.0);
    }

    #[test]
    fn distance_examples_match_closed_forms() {
        let fiber_l2 = Fiber::l2(2);
        let e1 = Subspace::new(
            fiber_l2.clone(),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            &tol(),
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert!((dist_to_span(&x, &e1, &tol()).unwrap() - 1.0).abs() < 1e-12);

        // Same question in Linf: min_t max(|1-t|, 1) = 1.
        let fiber_inf = Fiber::new(2, NormSpec::Linf).unwrap();
        let e1_inf = Subspace::new(
            fiber_inf,
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            &tol(),
        )
        .unwrap();
        let d = dist_to_span(&x, &e1_inf, &tol()).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "Linf distance {d}");
    }

    #[test]
    fn l1_distance_solves_the_lp_exactly() {
        // dist_1((2, 1), span{(1, 1)}): min |2-t| + |1-t| = 1 on t in [1, 2].
        let fiber = Fiber::new(2, NormSpec::L1).unwrap();
        let s = Subspace::new(
            fiber,
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            &tol(),
        )
        .unwrap();
        let x = DVector::from_vec(vec![2.0, 1.0]);
        let d = dist_to_span(&x, &s, &tol()).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "L1 distance {d}");
    }

    #[test]
    fn volume_of_a_sheared_pair_is_one() {
        let fiber = Fiber::l2(2);
        let v = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        ];
        let vol = volume(&v, &fiber, &tol()).unwrap();
        assert!((vol - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dk_diagonal_l2_values() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let d1 = dk_of_map(&a, &NormSpec::L2, &NormSpec::L2, 1, &tol()).unwrap();
        let d2 = dk_of_map(&a, &NormSpec::L2, &NormSpec::L2, 2, &tol()).unwrap();
        assert!(d1.exact && (d1.value - 2.0).abs() < 1e-12);
        assert!(d2.exact && (d2.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dk_linf_hadamard_example() {
        // Operator norm Linf -> Linf is the max absolute row sum: 2 here.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        let d1 = dk_of_map(&a, &NormSpec::Linf, &NormSpec::Linf, 1, &tol()).unwrap();
        assert!(d1.exact);
        assert!((d1.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn heuristic_dk_lower_bounds_the_l2_value_within_norm_equivalence() {
        // For any norms on R^d, D_k values are sandwiched by norm-equivalence
        // constants; here just check the search produces something positive
        // and consistent for a 3x3 example, k = 2.
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.3, 0.0, -0.2, 0.8, 0.1, 0.0, 0.4, 1.5],
        );
        let est = dk_of_map(&a, &NormSpec::L1, &NormSpec::Linf, 2, &tol()).unwrap();
        assert!(!est.exact);
        assert!(est.value > 0.0);
        // Upper bound: D_k in any pair of norms is at most the L2 value times
        // d^k (crude equivalence constants for d = 3, k = 2).
        let l2 = dk_of_map(&a, &NormSpec::L2, &NormSpec::L2, 2, &tol())
            .unwrap()
            .value;
        assert!(est.value <= 9.0 * l2 + 1e-9);
    }

    #[test]
    fn dual_dk_l2_is_symmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let d = dk_of_map(&a, &NormSpec::L2, &NormSpec::L2, 2, &tol()).unwrap();
        let dd = dual_dk(&a, &NormSpec::L2, &NormSpec::L2, 2, &tol()).unwrap();
        assert!((d.value - dd.value).abs() < 1e-10);
    }

    #[test]
    fn restricted_norm_on_an_axis() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        let fiber = Fiber::l2(2);
        let s = Subspace::new(
            fiber,
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            &tol(),
        )
        .unwrap();
        let r = restricted_operator_norm(&a, &s, &NormSpec::L2, &tol()).unwrap();
        assert!(r.exact && (r.value - 0.5).abs() < 1e-12);
    }

    /// Deterministic pseudo-random matrix for the factorization tests.
    fn lcg_matrix(seed: &mut u64, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn svd_factors_reconstruct_and_stay_orthonormal() {
        let mut seed = 7u64;
        for trial in 0..400 {
            let rows = 1 + (trial % 7);
            let cols = 1 + ((trial / 7) % 7);
            let mut m = lcg_matrix(&mut seed, rows, cols);
            match trial % 4 {
                // Exact rank deficiency in several flavors.
                1 if rows > 1 => {
                    let r0 = m.row(0).into_owned();
                    m.set_row(rows - 1, &r0);
                }
                2 if cols > 1 => {
                    let c0 = m.column(0).into_owned();
                    m.set_column(cols - 1, &c0);
                }
                3 => m.fill_column(0, 0.0),
                _ => {}
            }
            let (sigma, u, vt) = svd_sorted(&m);
            let k = rows.min(cols);
            assert_eq!(sigma.len(), k);
            assert!(sigma.windows(2).all(|w| w[0] >= w[1]), "descending order");
            let recomposed = &u * DMatrix::from_diagonal(&DVector::from_vec(sigma.clone())) * &vt;
            let scale = 1.0 + m.norm();
            assert!(
                (&recomposed - &m).norm() <= 1e-13 * scale,
                "trial {trial}: reconstruction defect {}",
                (&recomposed - &m).norm()
            );
            let ud = (u.transpose() * &u - DMatrix::identity(k, k)).norm();
            let vd = (&vt * vt.transpose() - DMatrix::identity(k, k)).norm();
            assert!(ud <= 1e-13, "trial {trial}: U defect {ud}");
            assert!(vd <= 1e-13, "trial {trial}: V defect {vd}");
        }
    }

    #[test]
    fn svd_values_survive_rank_deficiency() {
        // A projector residual of intersecting subspaces is numerically
        // rank-one; the top singular value must not drift at the 1e-4 scale
        // the way an accumulating bidiagonalization can.
        let mut seed = 21u64;
        for _ in 0..200 {
            let m = lcg_matrix(&mut seed, 6, 3);
            let q = thin_orthonormal(&m, 1e-13);
            let probe = lcg_matrix(&mut seed, 6, 2);
            let c = &probe - &q * (q.transpose() * &probe);
            let (sigma, _, _) = svd_sorted(&c);
            let mut oracle: Vec<f64> = c
                .clone()
                .svd(false, false)
                .singular_values
                .iter()
                .copied()
                .collect();
            oracle.sort_by(|x, y| y.total_cmp(x));
            for (s, o) in sigma.iter().zip(&oracle) {
                assert!((s - o).abs() <= 1e-12 * (1.0 + o), "{s} vs {o}");
            }
        }
    }

    #[test]
    fn pseudo_inverse_satisfies_the_penrose_identities() {
        let mut seed = 5u64;
        for trial in 0..300 {
            let rows = 1 + (trial % 6);
            let cols = 1 + ((trial / 6) % 6);
            let mut m = lcg_matrix(&mut seed, rows, cols);
            if trial % 3 == 1 && cols > 1 {
                let c0 = m.column(0).into_owned();
                m.set_column(cols - 1, &c0);
            }
            let p = pseudo_inverse(&m, 1e-13);
            let scale = 1.0 + m.norm() + p.norm();
            assert!(((&m * &p * &m) - &m).norm() <= 1e-10 * scale, "A P A = A");
            assert!(((&p * &m * &p) - &p).norm() <= 1e-10 * scale, "P A P = P");
            let ap = &m * &p;
            let pa = &p * &m;
            assert!((&ap - ap.transpose()).norm() <= 1e-10 * scale, "A P symmetric");
            assert!((&pa - pa.transpose()).norm() <= 1e-10 * scale, "P A symmetric");
        }
    }
}
