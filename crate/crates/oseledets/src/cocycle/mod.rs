//! Linear and nonlinear cocycles over a base system, with overflow-safe
//! products.
//!
//! Products are stored as (matrix, log_scale) pairs: whenever the largest
//! entry magnitude leaves [1e-150, 1e150] the matrix is renormalized and the
//! logarithm is accumulated, so growth rates remain readable far past f64
//! range. Fiber dimensions may vary along the orbit; every product checks the
//! chain of shapes it multiplies.

pub mod builtins;

use crate::base::{BasePoint, BaseSystem};
use crate::config::ToleranceConfig;
use crate::error::{Error, Result};
use crate::geometry::{Fiber, NormSpec, Subspace};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

type DimFn = Arc<dyn Fn(&BasePoint) -> usize + Send + Sync>;
type NormFn = Arc<dyn Fn(&BasePoint) -> NormSpec + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&BasePoint) -> DMatrix<f64> + Send + Sync>;
type MapFn = Arc<dyn Fn(&BasePoint, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type DerivativeFn = Arc<dyn Fn(&BasePoint, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type StationaryFn = Arc<dyn Fn(&BasePoint) -> DVector<f64> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&BasePoint) -> f64 + Send + Sync>;

/// Measurable field of normed fibers over the base.
#[derive(Clone)]
pub struct FieldSpec {
    dim_fn: DimFn,
    norm_fn: NormFn,
}

impl fmt::Debug for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldSpec").finish_non_exhaustive()
    }
}

impl FieldSpec {
    pub fn new(dim_fn: DimFn, norm_fn: NormFn) -> Self {
        FieldSpec { dim_fn, norm_fn }
    }

    pub fn constant(dim: usize, norm: NormSpec) -> Self {
        FieldSpec {
            dim_fn: Arc::new(move |_| dim),
            norm_fn: Arc::new(move |_| norm.clone()),
        }
    }

    pub fn dim(&self, p: &BasePoint) -> usize {
        (self.dim_fn)(p)
    }

    pub fn fiber(&self, p: &BasePoint) -> Result<Fiber> {
        Fiber::new((self.dim_fn)(p), (self.norm_fn)(p))
    }
}

/// A linear cocycle: base dynamics plus a matrix generator.
#[derive(Clone)]
pub struct LinearCocycle {
    pub base: BaseSystem,
    pub field: FieldSpec,
    matrix_fn: MatrixFn,
}

impl fmt::Debug for LinearCocycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearCocycle")
            .field("base", &self.base)
            .finish_non_exhaustive()
    }
}

impl LinearCocycle {
    pub fn new(base: BaseSystem, field: FieldSpec, matrix_fn: MatrixFn) -> Self {
        LinearCocycle {
            base,
            field,
            matrix_fn,
        }
    }

    /// One-step generator at `p`, shape-checked: dim(theta p) x dim(p).
    pub fn matrix(&self, p: &BasePoint) -> Result<DMatrix<f64>> {
        let m = (self.matrix_fn)(p);
        let rows = self.field.dim(&self.base.theta(p));
        let cols = self.field.dim(p);
        if m.nrows() != rows || m.ncols() != cols {
            return Err(Error::DimensionMismatch {
                context: format!("one-step matrix at time {}", p.time),
                expected: rows * 10_000 + cols,
                got: m.nrows() * 10_000 + m.ncols(),
            });
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "one-step matrix at time {}",
                p.time
            )));
        }
        Ok(m)
    }
}

const SCALE_HI: f64 = 1e150;
const SCALE_LO: f64 = 1e-150;

/// A matrix with a separated logarithmic scale: the represented value is
/// matrix * exp(log_scale).
#[derive(Debug, Clone)]
pub struct ScaledMatrix {
    pub matrix: DMatrix<f64>,
    pub log_scale: f64,
}

impl ScaledMatrix {
    pub fn identity(dim: usize) -> Self {
        ScaledMatrix {
            matrix: DMatrix::identity(dim, dim),
            log_scale: 0.0,
        }
    }

    pub fn new(matrix: DMatrix<f64>, log_scale: f64) -> Self {
        ScaledMatrix { matrix, log_scale }.rescaled()
    }

    /// Pull the largest entry magnitude back into the safe window, moving the
    /// difference into `log_scale`.
    pub fn rescaled(mut self) -> Self {
        let amax = self.matrix.amax();
        if amax > 0.0 && amax.is_finite() && !(SCALE_LO..=SCALE_HI).contains(&amax) {
            self.matrix /= amax;
            self.log_scale += amax.ln();
        }
        self
    }

    pub fn left_mul(&self, a: &DMatrix<f64>) -> Self {
        ScaledMatrix {
            matrix: a * &self.matrix,
            log_scale: self.log_scale,
        }
        .rescaled()
    }

    /// Dense value; overflows to +-inf when exp(log_scale) leaves f64 range.
    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.matrix * self.log_scale.exp()
    }

    /// Image of `x` with the scale kept separate.
    pub fn apply(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        (&self.matrix * x, self.log_scale)
    }

    /// log of the norm of (this matrix) * x, overflow-safe.
    pub fn log_norm_of_image(&self, x: &DVector<f64>, norm: &NormSpec) -> f64 {
        let y = &self.matrix * x;
        self.log_scale + norm.eval_unchecked(&y).ln()
    }

    /// Inverse of a square scaled matrix.
    pub fn inverse(&self) -> Result<ScaledMatrix> {
        if self.matrix.nrows() != self.matrix.ncols() {
            return Err(Error::InvalidParameter(
                "inverse of a non-square scaled matrix".into(),
            ));
        }
        let inv = self
            .matrix
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("singular matrix in inverse".into()))?;
        Ok(ScaledMatrix::new(inv, -self.log_scale))
    }
}

/// An n-step cocycle product with its endpoints.
#[derive(Debug, Clone)]
pub struct CocycleProduct {
    /// Base point whose fiber is the domain.
    pub start: BasePoint,
    /// Base point whose fiber is the codomain.
    pub end: BasePoint,
    pub steps: usize,
    pub scaled: ScaledMatrix,
}

/// Forward product psi^n_p: E_p -> E_{theta^n p}.
pub fn compose_forward(c: &LinearCocycle, p: &BasePoint, n: usize) -> Result<CocycleProduct> {
    let mut m = ScaledMatrix::identity(c.field.dim(p));
    let mut q = *p;
    for _ in 0..n {
        let a = c.matrix(&q)?;
        m = m.left_mul(&a);
        q = c.base.theta(&q);
    }
    Ok(CocycleProduct {
        start: *p,
        end: q,
        steps: n,
        scaled: m,
    })
}

/// Backward-anchored product psi^n_{sigma^n p}: E_{sigma^n p} -> E_p.
pub fn compose_backward(c: &LinearCocycle, p: &BasePoint, n: usize) -> Result<CocycleProduct> {
    let start = c.base.shift(p, -(n as i64));
    let mut m = ScaledMatrix::identity(c.field.dim(&start));
    // Apply the generator at sigma^n p first, then walk forward to sigma p.
    for j in (1..=n).rev() {
        let q = c.base.shift(p, -(j as i64));
        let a = c.matrix(&q)?;
        m = m.left_mul(&a);
    }
    Ok(CocycleProduct {
        start,
        end: *p,
        steps: n,
        scaled: m,
    })
}

/// Inverse of the product restricted to a pair of subspaces it maps onto each
/// other: returns the coefficient matrix of (product|_{h_start -> h_end})^{-1}
/// in the given bases, as a scaled matrix.
pub fn restricted_inverse(
    prod: &CocycleProduct,
    h_end: &Subspace,
    h_start: &Subspace,
    tol: &ToleranceConfig,
) -> Result<ScaledMatrix> {
    let k = h_start.dim();
    if h_end.dim() != k || k == 0 {
        return Err(Error::InvalidParameter(
            "restricted_inverse needs equal positive dimensions".into(),
        ));
    }
    if h_start.fiber().dim != prod.scaled.matrix.ncols()
        || h_end.fiber().dim != prod.scaled.matrix.nrows()
    {
        return Err(Error::DimensionMismatch {
            context: "restricted_inverse subspaces".into(),
            expected: prod.scaled.matrix.ncols(),
            got: h_start.fiber().dim,
        });
    }
    let image = &prod.scaled.matrix * h_start.basis();
    // Injectivity on h_start: the image columns must pass the volume-based
    // independence check of a subspace constructor.
    let image_span = Subspace::new(h_end.fiber().clone(), image.clone(), tol)?;
    if image_span.dim() != k {
        return Err(Error::InvalidParameter(
            "restricted product is singular on the given subspace".into(),
        ));
    }
    let qe = h_end.ortho();
    let resid = image_span.ortho() - qe * (qe.transpose() * image_span.ortho());
    let delta = resid.norm();
    if delta > tol.restricted_image_tol {
        return Err(Error::ImageMismatch {
            delta,
            tol: tol.restricted_image_tol,
        });
    }
    // Coefficients of the image in the h_end basis: B_e C = M B_s.
    let be = h_end.basis();
    let c_tilde = crate::geometry::pseudo_inverse(be, 1e-13) * &image;
    let inv = c_tilde
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| {
            Error::InvalidParameter("restricted product is singular on the given subspace".into())
        })?;
    // Identity check: product . inverse fixes the h_end basis to 1e-8.
    let recomposed = &image * &inv;
    let defect = (&recomposed - be).norm() / (1.0 + be.norm());
    if defect > 1e-8 {
        return Err(Error::BoundViolated {
            what: "restricted inverse recomposition".into(),
            value: defect,
            bound: 1e-8,
        });
    }
    Ok(ScaledMatrix::new(inv, -prod.scaled.log_scale))
}

/// Nonlinearity data attached to a nonlinear cocycle: the residual bound
/// ||P(xi) - P(xi~)|| <= ||xi - xi~|| f(p) h(||xi|| + ||xi~||) with
/// h(x) = x^r g(x).
#[derive(Clone)]
pub struct NonlinearityParams {
    pub r: f64,
    pub g: GrowthFn,
    f_fn: ScalarFn,
    rho_fn: ScalarFn,
}

impl fmt::Debug for NonlinearityParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearityParams")
            .field("r", &self.r)
            .field("g", &self.g)
            .finish_non_exhaustive()
    }
}

/// The gauge factor g in h(x) = x^r g(x); must be nondecreasing and positive.
#[derive(Debug, Clone, PartialEq)]
pub enum GrowthFn {
    Constant(f64),
}

impl GrowthFn {
    pub fn eval(&self, _x: f64) -> f64 {
        match self {
            GrowthFn::Constant(c) => *c,
        }
    }
}

impl NonlinearityParams {
    pub fn new(r: f64, g: GrowthFn, f_fn: ScalarFn, rho_fn: ScalarFn) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(
                "nonlinearity exponent r must be positive".into(),
            ));
        }
        let GrowthFn::Constant(c) = g;
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(
                "growth constant must be positive".into(),
            ));
        }
        Ok(NonlinearityParams { r, g, f_fn, rho_fn })
    }

    pub fn constant(r: f64, g: f64, f_val: f64, rho_val: f64) -> Result<Self> {
        Self::new(
            r,
            GrowthFn::Constant(g),
            Arc::new(move |_| f_val),
            Arc::new(move |_| rho_val),
        )
    }

    pub fn f(&self, p: &BasePoint) -> f64 {
        (self.f_fn)(p)
    }

    pub fn rho(&self, p: &BasePoint) -> f64 {
        (self.rho_fn)(p)
    }

    /// h(x) = x^r g(x), increasing on [0, inf).
    pub fn h(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        x.powf(self.r) * self.g.eval(x)
    }

    /// Inverse of h by doubling bracket plus bisection to relative tolerance.
    pub fn h_inv(&self, y: f64, rel_tol: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0f64;
        let mut iters = 0;
        while self.h(hi) < y {
            hi *= 2.0;
            iters += 1;
            if iters > 1100 {
                return hi; // y beyond representable range; caller clamps
            }
        }
        let mut lo = 0.0f64;
        while hi - lo > rel_tol * hi.max(1e-300) {
            let mid = 0.5 * (lo + hi);
            if self.h(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// A nonlinear cocycle with a stationary orbit and a linearization.
#[derive(Clone)]
pub struct NonlinearCocycle {
    pub base: BaseSystem,
    pub field: FieldSpec,
    map_fn: MapFn,
    derivative_fn: DerivativeFn,
    stationary_fn: StationaryFn,
    pub nonlinearity: NonlinearityParams,
}

impl fmt::Debug for NonlinearCocycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearCocycle")
            .field("base", &self.base)
            .field("nonlinearity", &self.nonlinearity)
            .finish_non_exhaustive()
    }
}

impl NonlinearCocycle {
    pub fn new(
        base: BaseSystem,
        field: FieldSpec,
        map_fn: MapFn,
        derivative_fn: DerivativeFn,
        stationary_fn: StationaryFn,
        nonlinearity: NonlinearityParams,
    ) -> Self {
        NonlinearCocycle {
            base,
            field,
            map_fn,
            derivative_fn,
            stationary_fn,
            nonlinearity,
        }
    }

    pub fn map(&self, p: &BasePoint, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.field.dim(p) {
            return Err(Error::DimensionMismatch {
                context: "nonlinear map input".into(),
                expected: self.field.dim(p),
                got: x.len(),
            });
        }
        let y = (self.map_fn)(p, x);
        let out = self.field.dim(&self.base.theta(p));
        if y.len() != out {
            return Err(Error::DimensionMismatch {
                context: "nonlinear map output".into(),
                expected: out,
                got: y.len(),
            });
        }
        Ok(y)
    }

    pub fn derivative(&self, p: &BasePoint, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = (self.derivative_fn)(p, x);
        let rows = self.field.dim(&self.base.theta(p));
        let cols = self.field.dim(p);
        if m.nrows() != rows || m.ncols() != cols {
            return Err(Error::DimensionMismatch {
                context: "derivative shape".into(),
                expected: rows * 10_000 + cols,
                got: m.nrows() * 10_000 + m.ncols(),
            });
        }
        Ok(m)
    }

    /// The stationary orbit value at `p`; satisfies map(p, Y_p) = Y_{theta p}.
    pub fn stationary(&self, p: &BasePoint) -> DVector<f64> {
        (self.stationary_fn)(p)
    }

    /// Derivative cocycle along the stationary orbit.
    pub fn linearized(&self) -> LinearCocycle {
        let deriv = self.derivative_fn.clone();
        let stat = self.stationary_fn.clone();
        LinearCocycle {
            base: self.base.clone(),
            field: self.field.clone(),
            matrix_fn: Arc::new(move |p| deriv(p, &stat(p))),
        }
    }

    /// Forward orbit of the map itself: x at p, n steps.
    pub fn iterate(&self, p: &BasePoint, x: &DVector<f64>, n: usize) -> Result<DVector<f64>> {
        let mut q = *p;
        let mut v = x.clone();
        for _ in 0..n {
            v = self.map(&q, &v)?;
            q = self.base.theta(&q);
        }
        Ok(v)
    }
}

/// Deviation of the map from its linearization along the stationary orbit:
/// P_p(xi) = map(p, Y_p + xi) - map(p, Y_p) - Dmap(p, Y_p) xi.
pub fn perron_residual(
    nc: &NonlinearCocycle,
    p: &BasePoint,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let y = nc.stationary(p);
    let a = nc.derivative(p, &y)?;
    let fy = nc.map(p, &y)?;
    let fyx = nc.map(p, &(&y + xi))?;
    Ok(fyx - fy - a * xi)
}
