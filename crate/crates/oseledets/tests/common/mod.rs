//! Shared helpers for the integration batteries: a deterministic generator
//! for test data (independent of the library's own randomness path) and
//! small constructors for fibers, frames, and subspaces.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use oseledets::geometry::{Fiber, NormSpec, Subspace};
use oseledets::ToleranceConfig;

/// SplitMix64 stream; deliberately a different generator family from the
/// library's counter-based draws so test data cannot share structure with
/// the code under test.
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [-1, 1].
    pub fn sym(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }

    /// Uniform in [lo, hi].
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in [lo, hi].
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() as usize) % (hi - lo + 1)
    }
}

pub fn tol() -> ToleranceConfig {
    ToleranceConfig::default()
}

pub fn matrix(rng: &mut TestRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sym())
}

pub fn vector(rng: &mut TestRng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sym())
}

pub fn unit_vector(rng: &mut TestRng, d: usize) -> DVector<f64> {
    loop {
        let v = vector(rng, d);
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

/// A random subspace of the fiber with the requested dimension, built from
/// a well-conditioned random basis (resampled until acceptance).
pub fn subspace(rng: &mut TestRng, fiber: &Fiber, dim: usize) -> Subspace {
    loop {
        let b = matrix(rng, fiber.dim, dim);
        if let Ok(s) = Subspace::new(fiber.clone(), b, &tol()) {
            return s;
        }
    }
}

/// Least-squares slope of y against x.
pub fn lsq_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NEG_INFINITY;
    }
    let mx = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Product of the k largest singular values: the closed form for the
/// k-volume growth functional between L2 fibers.
pub fn top_k_singular_product(a: &DMatrix<f64>, k: usize) -> f64 {
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv.iter().take(k).product()
}

/// Cosines of the principal angles between the column spans of two
/// orthonormal matrices, descending.
pub fn principal_cosines(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> Vec<f64> {
    let cross = qa.transpose() * qb;
    let mut sv: Vec<f64> = cross.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv.iter().map(|c| c.clamp(0.0, 1.0)).collect()
}

/// The four shipped norm kinds on dimension `d`, weighted variant included.
pub fn norm_kinds(rng: &mut TestRng, d: usize) -> Vec<NormSpec> {
    let weights: Vec<f64> = (0..d).map(|_| rng.range(0.25, 4.0)).collect();
    vec![
        NormSpec::L2,
        NormSpec::L1,
        NormSpec::Linf,
        NormSpec::WeightedSup { weights },
    ]
}
