//! Catalog of ready-made systems, addressable by name plus JSON params.
//!
//! Random coefficients are revealed through the base point's `draw` channels,
//! so every builtin is deterministic in (seed, time) and safe to traverse in
//! either direction. Channel layout per builtin is documented on each
//! constructor.

use super::{FieldSpec, LinearCocycle, NonlinearCocycle, NonlinearityParams};
use crate::base::{draw_uniform, BaseSystem};
use crate::error::{Error, Result};
use crate::geometry::NormSpec;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use std::sync::Arc;

/// A catalog entry: either a linear cocycle or a nonlinear one with its
/// linearization available.
#[derive(Debug, Clone)]
pub enum BuiltinSystem {
    Linear(LinearCocycle),
    Nonlinear(NonlinearCocycle),
}

impl BuiltinSystem {
    /// The linear cocycle to feed spectrum/splitting: the system itself, or
    /// the derivative cocycle along the stationary orbit.
    pub fn linear(&self) -> LinearCocycle {
        match self {
            BuiltinSystem::Linear(c) => c.clone(),
            BuiltinSystem::Nonlinear(nc) => nc.linearized(),
        }
    }

    pub fn nonlinear(&self) -> Option<&NonlinearCocycle> {
        match self {
            BuiltinSystem::Linear(_) => None,
            BuiltinSystem::Nonlinear(nc) => Some(nc),
        }
    }
}

pub fn builtin_names() -> &'static [&'static str] {
    &[
        "constant_matrix",
        "random_diagonal",
        "random_triangular",
        "rotation_scaling",
        "varying_dimension",
        "discretized_delay",
        "quadratic_saddle",
        "deterministic_saddle",
    ]
}

/// Instantiate a catalog system over `base` from its JSON params.
pub fn builtin(name: &str, params: &serde_json::Value, base: BaseSystem) -> Result<BuiltinSystem> {
    match name {
        "constant_matrix" => constant_matrix(params, base),
        "random_diagonal" => random_diagonal(params, base),
        "random_triangular" => random_triangular(params, base),
        "rotation_scaling" => rotation_scaling(params, base),
        "varying_dimension" => varying_dimension(params, base),
        "discretized_delay" => discretized_delay(params, base),
        "quadratic_saddle" => quadratic_saddle(params, base),
        "deterministic_saddle" => deterministic_saddle(params, base),
        other => Err(Error::Config(format!(
            "unknown system '{other}'; known: {}",
            builtin_names().join(", ")
        ))),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(name: &str, params: &serde_json::Value) -> Result<T> {
    serde_json::from_value(params.clone())
        .map_err(|e| Error::Config(format!("params for '{name}': {e}")))
}

fn default_norm() -> NormSpec {
    NormSpec::L2
}

fn range_pair(name: &str, pair: [f64; 2]) -> Result<[f64; 2]> {
    if !pair.iter().all(|v| v.is_finite()) || pair[0] > pair[1] {
        return Err(Error::Config(format!(
            "{name}: expected a finite [lo, hi] with lo <= hi, got {pair:?}"
        )));
    }
    Ok(pair)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantMatrixParams {
    matrix: Vec<Vec<f64>>,
    #[serde(default = "default_norm")]
    norm: NormSpec,
}

/// Constant square one-step matrix; exponents are the logs of its singular
/// spectrum's eigenvalue moduli.
fn constant_matrix(params: &serde_json::Value, base: BaseSystem) -> Result<BuiltinSystem> {
    let p: ConstantMatrixParams = parse("constant_matrix", params)?;
    let d = p.matrix.len();
    if d == 0 || p.matrix.iter().any(|row| row.len() != d) {
        return Err(Error::Config(
            "constant_matrix: 'matrix' must be square and nonempty".into(),
        ));
    }
    let flat: Vec<f64> = p.matrix.iter().flatten().copied().collect();
    if !flat.iter().all(|v| v.is_finite()) {
        return Err(Error::Config("constant_matrix: non-finite entry".into()));
    }
    let m = DMatrix::from_row_slice(d, d, &flat);
    p.norm.validate(d)?;
    let field = FieldSpec::constant(d, p.norm);
    Ok(BuiltinSystem::Linear(LinearCocycle::new(
        base,
        field,
        Arc::new(move |_| m.clone()),
    )))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomDiagonalParams {
    /// One [lo, hi] interval per diagonal entry; entry i is exp(u_i) with
    /// u_i uniform on the interval, drawn on channel i.
    log_factors: Vec<[f64; 2]>,
    #[serde(default = "default_norm")]
    norm: NormSpec,
}

/// IID diagonal cocycle. Exponents are the interval midpoints (means of the
/// uniform log-factors), in decreasing order.
fn random_diagonal(params: &serde_json::Value, base: BaseSystem) -> Result<BuiltinSystem> {
    let p: RandomDiagonalParams = parse("random_diagonal", params)?;
    let d = p.log_factors.len();
    if d == 0 {
        return Err(Error::Config("random_diagonal: empty log_factors".into()));
    }
    for pair in &p.log_factors {
        range_pair("random_diagonal.log_factors", *pair)?;
    }
    p.norm.validate(d)?;
    let field = FieldSpec::constant(d, p.norm);
    let ranges = p.log_factors;
    Ok(BuiltinSystem::Linear(LinearCocycle::new(
        base,
        field,
        Arc::new(move |q| {
            DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    draw_uniform(q, i as u32, ranges[i][0], ranges[i][1]).exp()
                } else {
                    0.0
                }
            })
        }),
    )))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomTriangularParams {
    /// Diagonal law, as in random_diagonal (channels 0..d).
    log_factors: Vec<[f64; 2]>,
    /// Strict upper-triangle entries are uniform on [-coupling, coupling]
    /// (channel d + i*d + j for entry (i, j)).
    #[serde(default = "default_coupling")]
    coupling: f64,
    #[serde(default = "default_norm")]
    norm: NormSpec,
}

fn default_coupling() -> f64 {
    0.5
}

/// IID upper-triangular cocycle: same exponents as the diagonal alone, but
/// with nontrivial (non-orthogonal) Oseledets spaces.
fn random_triangular(params: &serde_json::Value, base: BaseSystem) -> Result<BuiltinSystem> {
    let p: RandomTriangularParams = parse("random_triangular", params)?;
    let d = p.log_factors.len();
    if d == 0 {
        return Err(Error::Config("random_triangular: empty log_factors".into()));
    }
    for pair in &p.log_factors {
        range_pair("random_triangular.log_factors", *pair)?;
    }
    if !(p.coupling >= 0.0 && p.coupling.is_finite()) {
        return Err(Error::Config(
            "random_triangular: coupling must be finite and >= 0".into(),
        ));
    }
    p.norm.validate(d)?;
    let field = FieldSpec::constant(d, p.norm);
    let ranges = p.log_factors;
    let coupling = p.coupling;
    Ok(BuiltinSystem::Linear(LinearCocycle::new(
        base,
        field,
        Arc::new(move |q| {
            DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    draw_uniform(q, i as u32, ranges[i][0], ranges[i][1]).exp()
                } else if i < j {
                    let ch = (d + i * d + j) as u32;
                    draw_uniform(q, ch, -coupling, coupling)
                } else {
                    0.0
                }
            })
        }),
    )))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RotationScalingParams {
    /// Log of the conformal factor, uniform on [lo, hi] (channel 0).
    log_factor: [f64; 2],
    /// Fixed rotation angle in radians.
    angle: f64,
    #[serde(default = "default_norm")]
    norm: NormSpec,
}

/// Conformal planar cocycle exp(u) R(angle): one exponent of multiplicity 2
/// at the mean of u.
fn rotation_scaling(params: &serde_json::Value, base: BaseSystem) -> Result<BuiltinSystem> {
    let p: RotationScalingParams = parse("rotation_scaling", params)?;
    let range = range_pair("rotation_scaling.log_factor", p.log_factor)?;
    if !p.angle.is_finite() {
        return Err(Error::Config("rotation_scaling: non-finite angle".into()));
    }
    p.norm.validate(2)?;
    let field = FieldSpec::constant(2, p.norm);
    let (c, s) = (p.angle.cos(), p.angle.sin());
    Ok(BuiltinSystem::Linear(LinearCocycle::new(
        base,
        field,
        Arc::new(move |q| {
            let a = draw_uniform(q, 0, range[0], range[1]).exp();
            DMatrix::from_row_slice(2, 2, &[a * c, -a * s, a * s, a * c])
        }),
    )))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VaryingDimensionParams {
    /// Fiber dimension at even times.
    dim_even: usize,
    /// Fiber dimension at odd times.
    dim_odd: usize,
    /// Log of the overall scale factor, uniform on [lo, hi] (channel 0).
    log_factor: [f64; 2],
    /// Additive perturbation of the truncated identity, uniform on
    /// [-coupling, coupling] per entry (channel 1 + i*cols + j).
    #[serde(default = "default_vd_coupling")]
    coupling: f64,
    #[serde(default = "default_norm")]
    norm: NormSpec,
}

fn default_vd_coupling() -> f64 {
    0.25
}

/// Rectangular cocycle over fibers whose dimension alternates with the parity
/// of time: each step maps dim(p) -> dim(theta p) through a perturbed
/// truncated identity times a random conformal factor.
fn varying_dimension(params: &serde_json::Value, base: BaseSystem) -> Result<BuiltinSystem> {
    let p: VaryingDimensionParams = parse("varying_dimension", params)?;
    if p.dim_even == 0 || p.dim_odd == 0 {
        return Err(Error::Config(
            "varying_dimension: dimensions must be positive".into(),
        ));
    }
    let range = range_pair("varying_dimension.log_factor", p.log_factor)?;
    if !(p.coupling >= 0.0 && p.coupling.is_finite()) {
        return Err(Error::Config(
            "varying_dimension: coupling must be finite and >= 0".into(),
        ));
    }
    // Per-fiber norms must fit both dimensions; weighted norms would need two
    // weight vectors, so only entrywise-uniform kinds are allowed here.
    if matches!(p.norm, NormSpec::WeightedSup { .. }) {
        return Err(Error::Config(
            "varying_dimension: weighted norms are not supported".into(),
        ));
    }
    let (de, do_) = (p.dim_even, p.dim_odd);
    let norm = p.norm;
    let dim_fn = move |t: i64| if t.rem_euclid(2) == 0 { de } else { do_ };
    let field = FieldSpec::new(
        Arc::new(move |q: &crate::base::BasePoint| dim_fn(q.time)),
        Arc::new(move |_: &crate::base::BasePoint| norm.clone()),
    );
    let coupling = p.coupling;
    Ok(BuiltinSystem::Linear(LinearCocycle::new(
        base,
        field,
        Arc::new(move |q| {
            let cols = dim_fn(q.time);
            let rows = dim_fn(q.time + 1);
            let scale = draw_uniform(q, 0, range[0], range[1]).exp();
            DMatrix::from_fn(rows, cols, |i, j| {
                let id = if i == j { 1.0 } else { 0.0 };
                let ch = (1 + i * cols + j) as u32;
                scale * (id + draw_uniform(q, ch, -coupling, coupling))
            })
        }),
    )))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiscretizedDelayParams {
    /// Coefficient on the current state.
    a: f64,
    /// Coefficient on the state tau steps back.
    b: f64,
    /// Delay length; the companion matrix has size tau + 1.
    tau: usize,
    #[serde(default = "default_norm")]
    norm: NormSpec,
}

/// Companion-form cocycle for the scalar delay recursion
/// x_{n+1} = a x_n + b x_{n-tau}, acting on the history vector
/// (x_n, ..., x_{n-tau}). Exponents are the log-moduli of the roots of
/// z^{tau+1} = a z^tau + b.
fn discretized_delay(params: &serde_json::Value, base: BaseSystem) -> Result<BuiltinSystem> {
    let p: DiscretizedDelayParams = parse("discretized_delay", params)?;
    if p.tau == 0 {
        return Err(Error::Config("discretized_delay: tau must be >= 1".into()));
    }
    if !(p.a.is_finite() && p.b.is_finite()) {
        return Err(Error::Config("discretized_delay: non-finite coefficients".into()));
    }
    let d = p.tau + 1;
    p.norm.validate(d)?;
    let field = FieldSpec::constant(d, p.norm);
    let mut m = DMatrix::zeros(d, d);
    m[(0, 0)] = p.a;
    m[(0, d - 1)] = p.b;
    for i in 1..d {
        m[(i, i - 1)] = 1.0;
    }
    Ok(BuiltinSystem::Linear(LinearCocycle::new(
        base,
        field,
        Arc::new(move |_| m.clone()),
    )))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticSaddleParams {
    /// Log of the contracting factor a, uniform on [lo, hi] (channel 0).
    log_a: [f64; 2],
    /// Log of the expanding factor b, uniform on [lo, hi] (channel 1).
    log_b: [f64; 2],
    /// Declared Lipschitz-gauge constants for the quadratic residual.
    #[serde(default = "one")]
    f_const: f64,
    #[serde(default = "one")]
    g_const: f64,
    #[serde(default = "one")]
    r: f64,
    #[serde(default = "one")]
    rho_const: f64,
    #[serde(default = "default_norm")]
    norm: NormSpec,
}

fn one() -> f64 {
    1.0
}

/// Random planar saddle (x, y) -> (a x, b y + x^2) with stationary orbit 0.
/// The residual P(xi) = (0, xi_x^2) satisfies the declared gauge with
/// r = 1, g = f = 1 exactly in the L2 norm.
fn quadratic_saddle(params: &serde_json::Value, base: BaseSystem) -> Result<BuiltinSystem> {
    let p: QuadraticSaddleParams = parse("quadratic_saddle", params)?;
    let ra = range_pair("quadratic_saddle.log_a", p.log_a)?;
    let rb = range_pair("quadratic_saddle.log_b", p.log_b)?;
    p.norm.validate(2)?;
    let field = FieldSpec::constant(2, p.norm);
    let nonlinearity = NonlinearityParams::constant(p.r, p.g_const, p.f_const, p.rho_const)?;
    let a_of = move |q: &crate::base::BasePoint| draw_uniform(q, 0, ra[0], ra[1]).exp();
    let b_of = move |q: &crate::base::BasePoint| draw_uniform(q, 1, rb[0], rb[1]).exp();
    Ok(BuiltinSystem::Nonlinear(NonlinearCocycle::new(
        base,
        field,
        Arc::new(move |q, x| {
            DVector::from_vec(vec![a_of(q) * x[0], b_of(q) * x[1] + x[0] * x[0]])
        }),
        Arc::new(move |q, x| {
            DMatrix::from_row_slice(2, 2, &[a_of(q), 0.0, 2.0 * x[0], b_of(q)])
        }),
        Arc::new(|_| DVector::zeros(2)),
        nonlinearity,
    )))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DeterministicSaddleParams {
    #[serde(default = "default_norm")]
    norm: NormSpec,
}

/// The fixed saddle (x, y) -> (x/2, 2y + x^2): stationary orbit 0, stable
/// manifold y = -(4/7) x^2, unstable manifold the y-axis.
fn deterministic_saddle(params: &serde_json::Value, base: BaseSystem) -> Result<BuiltinSystem> {
    let p: DeterministicSaddleParams = if params.is_null() {
        DeterministicSaddleParams::default()
    } else {
        parse("deterministic_saddle", params)?
    };
    p.norm.validate(2)?;
    let field = FieldSpec::constant(2, p.norm);
    let nonlinearity = NonlinearityParams::constant(1.0, 1.0, 1.0, 1.0)?;
    Ok(BuiltinSystem::Nonlinear(NonlinearCocycle::new(
        base,
        field,
        Arc::new(|_, x| DVector::from_vec(vec![0.5 * x[0], 2.0 * x[1] + x[0] * x[0]])),
        Arc::new(|_, x| DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 2.0 * x[0], 2.0])),
        Arc::new(|_| DVector::zeros(2)),
        nonlinearity,
    )))
}
