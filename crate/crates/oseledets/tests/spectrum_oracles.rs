//! Exponent estimation checked against closed-form oracles: characteristic
//! roots of a delay recursion, interval means of IID diagonal systems, and
//! white-box replay of the underlying draws.

mod common;

use common::{tol, TestRng};
use nalgebra::DVector;
use oseledets::base::{draw_uniform, BaseSystem};
use oseledets::cocycle::builtins::builtin;
use oseledets::cocycle::compose_forward;
use oseledets::spectrum::{
    slow_space, spectrum_of, temperedness_check, vector_growth_rate, Direction, ExponentStatus,
};
use serde_json::json;

/// Roots of z^3 = 1.2 z^2 + 0.4 (the tau = 2 delay recursion with a = 1.2,
/// b = 0.4): one real root and a complex pair, both frozen from an
/// independent polynomial solve.
const DELAY_MU_FAST: f64 = 0.338728747932446;
const DELAY_MU_SLOW: f64 = -0.627509739903301;

#[test]
fn delay_spectrum_matches_the_characteristic_roots() {
    let t = tol();
    let sys = builtin(
        "discretized_delay",
        &json!({"a": 1.2, "b": 0.4, "tau": 2}),
        BaseSystem::iid_shift(1),
    )
    .unwrap()
    .linear();
    let p = sys.base.origin_point();
    let spec = spectrum_of(&sys, &p, 3, 4000, Direction::Forward, &t).unwrap();

    assert_eq!(spec.levels(), 2, "one simple root and one complex pair");
    assert_eq!(spec.mult, vec![1, 2]);
    assert!(spec.all_resolved());
    assert!(
        (spec.mu[0] - DELAY_MU_FAST).abs() <= 2e-3,
        "fast exponent {} vs root modulus {DELAY_MU_FAST}",
        spec.mu[0]
    );
    assert!(
        (spec.mu[1] - DELAY_MU_SLOW).abs() <= 2e-3,
        "slow exponent {} vs pair modulus {DELAY_MU_SLOW}",
        spec.mu[1]
    );
    // Top-k sums follow from the same roots.
    let expected_sums = [
        DELAY_MU_FAST,
        DELAY_MU_FAST + DELAY_MU_SLOW,
        DELAY_MU_FAST + 2.0 * DELAY_MU_SLOW,
    ];
    for (k, want) in expected_sums.iter().enumerate() {
        assert!(
            (spec.sums[k] - want).abs() <= 5e-3,
            "Lambda_{}: {} vs {want}",
            k + 1,
            spec.sums[k]
        );
    }
    // The three increments are the log-moduli in decreasing order, so the
    // cumulative multiplicities end at the full dimension.
    assert_eq!(spec.mtilde, vec![1, 3]);
}

const DIAG_INTERVALS: [[f64; 2]; 3] = [[0.5, 0.9], [-0.1, 0.1], [-0.8, -0.4]];

#[test]
fn random_diagonal_exponents_hit_the_interval_means() {
    let t = tol();
    let n = 5000usize;
    let sys = builtin(
        "random_diagonal",
        &json!({"log_factors": DIAG_INTERVALS}),
        BaseSystem::iid_shift(606),
    )
    .unwrap()
    .linear();
    let p = sys.base.origin_point();
    let spec = spectrum_of(&sys, &p, 3, n, Direction::Forward, &t).unwrap();
    assert_eq!(spec.mult, vec![1, 1, 1]);
    assert!(spec.status.iter().all(|s| *s == ExponentStatus::Resolved));
    for (i, r) in DIAG_INTERVALS.iter().enumerate() {
        let mean = 0.5 * (r[0] + r[1]);
        // Tail-averaged estimator of an IID mean: std error
        // (hi-lo)/sqrt(12) / sqrt(7n/8); four of those is comfortable.
        let se = (r[1] - r[0]) / 12f64.sqrt() / (0.875 * n as f64).sqrt();
        assert!(
            (spec.mu[i] - mean).abs() <= 4.0 * se,
            "exponent {i}: {} vs mean {mean} (4 SE = {})",
            spec.mu[i],
            4.0 * se
        );
    }
}

#[test]
fn growth_series_replay_the_diagonal_draws_exactly() {
    // With disjoint log-intervals the diagonal never reorders, the pilot
    // frame is axis-aligned, and the QR-compensated series must reproduce
    // plain running means of the underlying uniform draws to rounding.
    let t = tol();
    let n = 400usize;
    let sys = builtin(
        "random_diagonal",
        &json!({"log_factors": DIAG_INTERVALS}),
        BaseSystem::iid_shift(607),
    )
    .unwrap()
    .linear();
    let p = sys.base.point_at(-55);
    let series =
        oseledets::spectrum::growth_series_all(&sys, &p, 3, n, Direction::Forward, &t).unwrap();
    let mut acc = [0.0f64; 3];
    for j in 0..n {
        let q = sys.base.shift(&p, j as i64);
        for (i, r) in DIAG_INTERVALS.iter().enumerate() {
            acc[i] += draw_uniform(&q, i as u32, r[0], r[1]);
        }
        let m = j + 1;
        let mut prefix = 0.0;
        for (i, s) in series.iter().enumerate() {
            prefix += acc[i];
            let (at, val) = s.values[j];
            assert_eq!(at, m);
            assert!(
                (val - prefix / m as f64).abs() <= 1e-12,
                "k={} at n={m}: series {val} vs draw mean {}",
                i + 1,
                prefix / m as f64
            );
        }
    }
}

#[test]
fn forward_and_backward_volume_rates_agree() {
    let t = tol();
    let n = 800usize;
    let sys = builtin(
        "random_triangular",
        &json!({"log_factors": [[0.3, 0.5], [-0.1, 0.1], [-0.7, -0.5]], "coupling": 0.6}),
        BaseSystem::iid_shift(608),
    )
    .unwrap()
    .linear();
    let p = sys.base.origin_point();
    let fwd = spectrum_of(&sys, &p, 3, n, Direction::Forward, &t).unwrap();
    let bwd = spectrum_of(&sys, &p, 3, n, Direction::Backward, &t).unwrap();
    for k in 0..3 {
        assert!(
            (fwd.sums[k] - bwd.sums[k]).abs() <= 0.05,
            "Lambda_{}: forward {} vs backward {}",
            k + 1,
            fwd.sums[k],
            bwd.sums[k]
        );
    }
}

#[test]
fn vector_growth_rates_sort_by_membership() {
    let mut rng = TestRng(41);
    let n = 3000usize;
    let sys = builtin(
        "random_diagonal",
        &json!({"log_factors": DIAG_INTERVALS}),
        BaseSystem::iid_shift(609),
    )
    .unwrap()
    .linear();
    let p = sys.base.origin_point();
    let means = [0.7, 0.0, -0.6];
    // Each axis grows at its own mean; a generic vector picks up the top one.
    for (i, want) in means.iter().enumerate() {
        let mut e = DVector::zeros(3);
        e[i] = 1.0;
        for dir in [Direction::Forward, Direction::Backward] {
            let rate = vector_growth_rate(&sys, &p, &e, n, dir).unwrap();
            assert!(
                (rate - want).abs() <= 0.05,
                "axis {i} {dir:?}: rate {rate} vs {want}"
            );
        }
    }
    let generic = DVector::from_vec(vec![rng.sym(), rng.sym(), rng.sym()]);
    let rate = vector_growth_rate(&sys, &p, &generic, n, Direction::Forward).unwrap();
    assert!((rate - means[0]).abs() <= 0.05, "generic rate {rate}");
}

#[test]
fn varying_dimension_measures_two_directions_and_a_residual() {
    let t = tol();
    let sys = builtin(
        "varying_dimension",
        &json!({"dim_even": 3, "dim_odd": 2, "log_factor": [-0.3, 0.3]}),
        BaseSystem::iid_shift(610),
    )
    .unwrap()
    .linear();
    let p_even = sys.base.point_at(0);
    let p_odd = sys.base.point_at(1);
    // Only two directions survive the rank-2 steps, so k_max = 2 regardless
    // of the starting parity.
    let spec = spectrum_of(&sys, &p_even, 2, 600, Direction::Forward, &t).unwrap();
    let total: usize = spec.mult.iter().sum();
    assert_eq!(total, 2);
    assert!(spec.all_resolved());

    // Below everything measured: one dying direction on the 3-dimensional
    // fiber, nothing on the 2-dimensional one.
    let resid_even = slow_space(&sys, &p_even, &spec, spec.levels() + 1, 40, &t).unwrap();
    assert_eq!(resid_even.dim(), 1);
    let resid_odd = slow_space(&sys, &p_odd, &spec, spec.levels() + 1, 40, &t).unwrap();
    assert_eq!(resid_odd.dim(), 0);

    // The residual direction at an even point is killed outright by the
    // n-step product (it spans the kernel of the rank-deficient chain).
    let prod = compose_forward(&sys, &p_even, 9).unwrap();
    let image = &prod.scaled.matrix * resid_even.basis();
    assert!(
        image.norm() <= 1e-10 * prod.scaled.matrix.norm(),
        "dying direction image {} vs product scale {}",
        image.norm(),
        prod.scaled.matrix.norm()
    );
}

#[test]
fn step_norms_are_tempered_on_iid_builtins() {
    for (name, params) in [
        (
            "random_triangular",
            json!({"log_factors": [[0.3, 0.8], [-0.2, 0.2], [-0.9, -0.5]], "coupling": 0.7}),
        ),
        ("random_diagonal", json!({"log_factors": DIAG_INTERVALS})),
    ] {
        let sys = builtin(name, &params, BaseSystem::iid_shift(611)).unwrap().linear();
        let p = sys.base.origin_point();
        let report = temperedness_check(&sys.base, &p, 2000, |q| {
            sys.matrix(q).unwrap().norm()
        })
        .unwrap();
        assert!(
            report.forward_slope.abs() <= 0.02 && report.backward_slope.abs() <= 0.02,
            "{name}: slopes {} / {}",
            report.forward_slope,
            report.backward_slope
        );
    }
}
