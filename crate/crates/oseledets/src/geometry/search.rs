//! Deterministic multi-start pattern search over unit spheres.
//!
//! Suprema over non-Euclidean unit spheres have no closed form in general, so
//! they are estimated from below: many starts (all sign vertices when the
//! dimension allows, the signed coordinate axes, and a deterministic
//! pseudo-random fill), each refined by a shrinking coordinate pattern search
//! on the sphere. Callers surface the result with a heuristic flag.

use super::NormSpec;
use nalgebra::DVector;

pub(crate) struct SearchBudget {
    pub starts: usize,
    pub vertex_cap: usize,
    pub max_evals_per_start: usize,
}

impl SearchBudget {
    pub fn full(starts: usize, vertex_cap: usize) -> Self {
        SearchBudget {
            starts,
            vertex_cap,
            max_evals_per_start: 600,
        }
    }

    /// Reduced budget for searches nested inside another search.
    pub fn inner() -> Self {
        SearchBudget {
            starts: 6,
            vertex_cap: 6,
            max_evals_per_start: 150,
        }
    }
}

/// Tiny deterministic generator for start vectors; fixed seed so repeated
/// runs see identical search trajectories.
struct MiniRng(u64);

impl MiniRng {
    fn next_unit(&mut self) -> f64 {
        // xorshift64*; top bits to [0, 1).
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        (x.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn next_sym(&mut self) -> f64 {
        2.0 * self.next_unit() - 1.0
    }
}

fn normalize(v: &DVector<f64>, norm: &NormSpec) -> Option<DVector<f64>> {
    let n = norm.eval_unchecked(v);
    if n > 1e-300 && n.is_finite() {
        Some(v / n)
    } else {
        None
    }
}

/// Start vectors on the unit sphere of `norm`: signed axes, sign vertices of
/// the relevant polytope when enumerable, then a pseudo-random fill.
pub(crate) fn sphere_starts(dim: usize, norm: &NormSpec, budget: &SearchBudget) -> Vec<DVector<f64>> {
    let mut starts: Vec<DVector<f64>> = Vec::new();
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut v = DVector::zeros(dim);
            v[i] = s;
            if let Some(u) = normalize(&v, norm) {
                starts.push(u);
            }
        }
    }
    // Sign vertices are the extreme points of the sup-type balls; for L1 the
    // signed axes above already are the extreme points.
    let enumerable = matches!(norm, NormSpec::Linf | NormSpec::WeightedSup { .. });
    if enumerable && dim <= budget.vertex_cap {
        for mask in 0..(1u64 << dim) {
            let mut v = DVector::from_element(dim, 1.0);
            for i in 0..dim {
                if mask >> i & 1 == 1 {
                    v[i] = -1.0;
                }
            }
            if let Some(u) = normalize(&v, norm) {
                starts.push(u);
            }
        }
    }
    let mut rng = MiniRng(0x0DDB_1A5E_5BAD_5EED ^ (dim as u64) << 32);
    while starts.len() < budget.starts {
        let v = DVector::from_fn(dim, |_, _| rng.next_sym());
        if let Some(u) = normalize(&v, norm) {
            starts.push(u);
        }
    }
    starts
}

/// Refine one start by coordinate pattern search on the unit sphere.
fn hill_climb(
    start: &DVector<f64>,
    norm: &NormSpec,
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
    max_evals: usize,
) -> (f64, DVector<f64>) {
    let dim = start.len();
    let mut best = start.clone();
    let mut best_val = f(&best);
    let mut step = 0.5;
    let mut evals = 1usize;
    while step > 1e-7 && evals < max_evals {
        let mut improved = false;
        for i in 0..dim {
            for s in [1.0f64, -1.0] {
                let mut cand = best.clone();
                cand[i] += s * step;
                let Some(cand) = normalize(&cand, norm) else {
                    continue;
                };
                let val = f(&cand);
                evals += 1;
                if val > best_val * (1.0 + 1e-14) + 1e-300 {
                    best_val = val;
                    best = cand;
                    improved = true;
                }
                if evals >= max_evals {
                    break;
                }
            }
            if evals >= max_evals {
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best_val, best)
}

/// Heuristic supremum of `f` over the unit sphere of `norm` in dimension
/// `dim`. Returns the best value found and its witness.
pub(crate) fn maximize_over_sphere(
    dim: usize,
    norm: &NormSpec,
    budget: &SearchBudget,
    extra_starts: &[DVector<f64>],
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
) -> (f64, DVector<f64>) {
    assert!(dim > 0, "sphere search needs a positive dimension");
    let mut starts = sphere_starts(dim, norm, budget);
    for e in extra_starts {
        if let Some(u) = normalize(e, norm) {
            starts.push(u);
        }
    }
    let mut best_val = f64::NEG_INFINITY;
    let mut best = starts[0].clone();
    for s in &starts {
        let (v, w) = hill_climb(s, norm, f, budget.max_evals_per_start);
        if v > best_val {
            best_val = v;
            best = w;
        }
    }
    (best_val, best)
}

/// Heuristic infimum over the unit sphere, by negating the objective.
pub(crate) fn minimize_over_sphere(
    dim: usize,
    norm: &NormSpec,
    budget: &SearchBudget,
    extra_starts: &[DVector<f64>],
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
) -> (f64, DVector<f64>) {
    let (neg, w) = maximize_over_sphere(dim, norm, budget, extra_starts, &mut |v| -f(v));
    (-neg, w)
}
