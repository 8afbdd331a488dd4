//! Local-manifold properties at integration scale: the closed-form parabola
//! and axis of the fixed planar saddle, fixed-point orbit replays, chart
//! decay and tangency on the random saddle, weight nesting, and stable and
//! unstable transversality along an orbit.

mod common;

use std::sync::Arc;

use common::tol;
use nalgebra::DVector;
use oseledets::base::{BasePoint, BaseSystem};
use oseledets::cocycle::builtins::builtin;
use oseledets::cocycle::NonlinearCocycle;
use oseledets::geometry::{grassmann_dist, Subspace};
use oseledets::manifolds::{
    fixed_point_orbit_check, membership_weighted_sup, perron_map_stable, solve_stable,
    solve_stable_from, solve_unstable, stable_chart, tangency_check, transversality_check,
    unstable_chart, unstable_orbit_check, PerronContext,
};
use oseledets::spectrum::{spectrum_of, Direction};
use oseledets::splitting::SplittingEngine;
use serde_json::json;

fn fixed_saddle() -> NonlinearCocycle {
    builtin(
        "deterministic_saddle",
        &serde_json::Value::Null,
        BaseSystem::iid_shift(7),
    )
    .unwrap()
    .nonlinear()
    .unwrap()
    .clone()
}

fn random_saddle(seed: u64) -> NonlinearCocycle {
    builtin(
        "quadratic_saddle",
        &json!({"log_a": [-0.8, -0.6], "log_b": [0.5, 0.7]}),
        BaseSystem::iid_shift(seed),
    )
    .unwrap()
    .nonlinear()
    .unwrap()
    .clone()
}

fn engine_at(nc: &NonlinearCocycle, p: &BasePoint, window: usize) -> Arc<SplittingEngine> {
    let lin = nc.linearized();
    let spec = spectrum_of(&lin, p, 2, window, Direction::Forward, &tol()).unwrap();
    Arc::new(SplittingEngine::new(lin, spec, tol()))
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let num: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    num / den
}

/// The fixed saddle (x, y) -> (x/2, 2y + x^2) has stable manifold
/// y = -(4/7) x^2: substituting shows 2(-4/7)x^2 + x^2 = (-4/7)(x/2)^2.
/// Chart points far inside the admissible radius must land on it.
#[test]
fn fixed_saddle_stable_chart_traces_the_invariant_parabola() {
    let nc = fixed_saddle();
    let p = nc.base.origin_point();
    let engine = engine_at(&nc, &p, 60);
    let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 30).unwrap();
    assert!(
        ctx.radius > 0.05,
        "admissible radius {} does not cover the test grid",
        ctx.radius
    );

    let mut grid = Vec::new();
    for k in 1..=5 {
        let x = 0.01 * k as f64;
        grid.push(DVector::from_vec(vec![x, 0.0]));
        grid.push(DVector::from_vec(vec![-x, 0.0]));
    }
    let chart = stable_chart(&ctx, &grid).unwrap();

    for (v, z) in chart.parameters.iter().zip(&chart.points) {
        assert!(
            (z[0] - v[0]).abs() <= 1e-12,
            "stable coordinate moved: parameter {} vs point {}",
            v[0],
            z[0]
        );
        let gap = (z[1] + 4.0 / 7.0 * z[0] * z[0]).abs();
        assert!(gap <= 1e-8, "parabola gap {gap} at x = {}", z[0]);
    }
    for r in &chart.residuals {
        assert!(*r < tol().fp_tol);
    }
    for rate in &chart.decay_rates {
        assert!(
            *rate <= -(2.0f64.ln()) + 0.05,
            "forward decay rate {rate} too slow"
        );
    }
    let e1 = Subspace::new(
        ctx.tangent_space().fiber().clone(),
        nalgebra::DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        &tol(),
    )
    .unwrap();
    let d = grassmann_dist(&chart.tangent, &e1, &tol()).unwrap().value;
    assert!(d <= 1e-12, "tangent line is off the x-axis by {d}");
}

/// Driving the fixed-point operator by hand must contract the weighted
/// residual by at least the configured factor at every meaningful step.
/// For this saddle the nonlinear residual lives entirely in the expanding
/// direction, so the slow coordinates are exact after one application and
/// the fast series after two: the iteration lands on the exact fixed point
/// in two steps, and a further application must leave it unchanged.
#[test]
fn fixed_saddle_picard_iteration_contracts_at_every_step() {
    let nc = fixed_saddle();
    let p = nc.base.origin_point();
    let engine = engine_at(&nc, &p, 60);
    let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 30).unwrap();
    // A parameter near the admissible edge keeps the contraction factor as
    // large as the theory allows.
    let v = DVector::from_vec(vec![0.8 * ctx.radius, 0.0]);

    let t = tol();
    let mut cur = ctx.zero_sequence();
    let mut residuals = Vec::new();
    for _ in 0..200 {
        let next = perron_map_stable(&ctx, &v, &cur).unwrap();
        let mut diff = next.clone();
        for (d, c) in diff.entries.iter_mut().zip(&cur.entries) {
            *d -= c;
        }
        let res = ctx.weighted_norm(&diff).unwrap();
        residuals.push(res);
        cur = next;
        if res < t.fp_tol {
            break;
        }
    }
    assert!(
        *residuals.last().unwrap() < t.fp_tol,
        "iteration did not converge: last residual {}",
        residuals.last().unwrap()
    );
    let mut measured = 0;
    for pair in residuals.windows(2) {
        if pair[0] > 50.0 * t.fp_tol {
            let ratio = pair[1] / pair[0];
            assert!(
                ratio <= t.contraction_cap,
                "contraction factor {ratio} above {}",
                t.contraction_cap
            );
            measured += 1;
        }
    }
    assert!(measured >= 1, "no meaningful contraction steps");

    // Exact stationarity of the limit.
    let again = perron_map_stable(&ctx, &v, &cur).unwrap();
    let mut diff = again.clone();
    for (d, c) in diff.entries.iter_mut().zip(&cur.entries) {
        *d -= c;
    }
    let settled = ctx.weighted_norm(&diff).unwrap();
    assert!(settled <= 1e-15, "fixed point drifts by {settled}");
}

/// The fixed saddle's unstable manifold is exactly the y-axis, and backward
/// orbits on it are (0, y / 2^n).
#[test]
fn fixed_saddle_unstable_chart_is_the_vertical_axis() {
    let nc = fixed_saddle();
    let p = nc.base.origin_point();
    let engine = engine_at(&nc, &p, 60);
    let ctx = PerronContext::unstable(&nc, engine, &p, 0.5, 30).unwrap();
    assert!(ctx.radius > 0.05);

    let mut grid = Vec::new();
    for k in 1..=5 {
        let y = 0.01 * k as f64;
        grid.push(DVector::from_vec(vec![0.0, y]));
        grid.push(DVector::from_vec(vec![0.0, -y]));
    }
    let chart = unstable_chart(&ctx, &grid).unwrap();
    for z in &chart.points {
        assert!(
            z[0].abs() <= 1e-10,
            "unstable chart point left the axis: x = {}",
            z[0]
        );
    }
    for e in &chart.recomposition_errors {
        assert!(*e <= 1e-8);
    }

    let y0 = 0.04;
    let (seq, _) = solve_unstable(&ctx, &DVector::from_vec(vec![0.0, y0])).unwrap();
    for (n, entry) in seq.entries.iter().enumerate() {
        let expect = y0 / 2f64.powi(n as i32);
        assert!(entry[0].abs() <= 1e-10, "axis escape at offset {n}");
        assert!(
            (entry[1] - expect).abs() <= 1e-10,
            "backward entry {n}: {} vs {expect}",
            entry[1]
        );
    }
    let back = unstable_orbit_check(&ctx, &seq).unwrap();
    assert!(back <= 1e-9, "backward orbit identity violated by {back}");
}

/// Stable fixed points replay the genuine nonlinear orbit on both saddles,
/// and restarting the iteration from the solution leaves it in place.
#[test]
fn fixed_points_replay_true_orbits_on_both_saddles() {
    let t = tol();

    let nc = fixed_saddle();
    let p = nc.base.origin_point();
    let engine = engine_at(&nc, &p, 60);
    let ctx = PerronContext::stable(&nc, engine, &p, 0.5, 30).unwrap();
    let v = DVector::from_vec(vec![0.04, 0.0]);
    let (seq, _) = solve_stable(&ctx, &v).unwrap();
    let check = fixed_point_orbit_check(&ctx, &v, &seq).unwrap();
    assert_eq!(check.series.len(), 31);
    assert!(
        check.max_discrepancy <= 1e-8,
        "fixed-saddle replay discrepancy {}",
        check.max_discrepancy
    );

    let rnc = random_saddle(41);
    let rp = rnc.base.origin_point();
    let rengine = engine_at(&rnc, &rp, 1000);
    let rctx = PerronContext::stable(&rnc, rengine, &rp, 0.35, 30).unwrap();
    let rv = DVector::from_vec(vec![0.3 * rctx.radius, 0.0]);
    let (rseq, _) = solve_stable(&rctx, &rv).unwrap();
    let rcheck = fixed_point_orbit_check(&rctx, &rv, &rseq).unwrap();
    assert!(
        rcheck.max_discrepancy <= 1e-8,
        "random-saddle replay discrepancy {}",
        rcheck.max_discrepancy
    );

    let (again, res) = solve_stable_from(&rctx, &rv, rseq.clone()).unwrap();
    assert!(res < t.fp_tol);
    let mut diff = again.clone();
    for (d, c) in diff.entries.iter_mut().zip(&rseq.entries) {
        *d -= c;
    }
    assert!(rctx.weighted_norm(&diff).unwrap() <= 10.0 * t.fp_tol);
}

/// Chart points of the random saddle decay at the stable exponent, nearby
/// chart points approach each other at that exponent, and secants through
/// the origin extrapolate into the tangent space.
#[test]
fn random_saddle_charts_decay_contract_and_stay_tangent() {
    let t = tol();
    let nc = random_saddle(5);
    let p = nc.base.origin_point();
    let engine = engine_at(&nc, &p, 1000);
    let ctx = PerronContext::stable(&nc, engine, &p, 0.35, 40).unwrap();
    assert!(ctx.mu_edge < -0.5, "stable exponent {}", ctx.mu_edge);

    let base = 0.2 * ctx.radius;
    let mut grid = Vec::new();
    for scale in [0.25, 0.5, 1.0] {
        grid.push(DVector::from_vec(vec![base * scale, 0.0]));
        grid.push(DVector::from_vec(vec![-base * scale, 0.0]));
    }
    let chart = stable_chart(&ctx, &grid).unwrap();

    for rate in &chart.decay_rates {
        assert!(*rate <= ctx.mu_edge + 0.05, "decay rate {rate}");
    }
    for sup in &chart.weighted_sups {
        assert!(*sup <= ctx.rho_2 * (1.0 + 1e-9));
    }

    let delta = tangency_check(&chart, &t).unwrap().value;
    assert!(delta <= 1e-4, "tangency defect {delta}");

    // Pairwise contraction: two points on the same local stable manifold
    // approach each other no slower than the stable exponent allows.
    for i in 0..chart.points.len() {
        for j in (i + 1)..chart.points.len() {
            let mut a = chart.points[i].clone();
            let mut b = chart.points[j].clone();
            let mut q = p;
            let mut fit = Vec::new();
            for n in 1..=20 {
                a = nc.map(&q, &a).unwrap();
                b = nc.map(&q, &b).unwrap();
                q = nc.base.theta(&q);
                let d = (&a - &b).norm();
                if d > 1e-13 {
                    fit.push((n as f64, d.ln()));
                }
            }
            assert!(fit.len() >= 5);
            let slope = least_squares_slope(&fit);
            assert!(
                slope <= ctx.mu_edge + 0.1,
                "pair ({i}, {j}) separates at rate {slope}"
            );
        }
    }
}

/// A chart computed under a stronger decay weight stays inside the manifold
/// recognized by a weaker weight, while a point pushed off along the
/// expanding axis is rejected.
#[test]
fn stronger_weight_charts_nest_into_weaker_manifolds() {
    let nc = random_saddle(6);
    let p = nc.base.origin_point();
    let engine = engine_at(&nc, &p, 1000);
    let strong = PerronContext::stable(&nc, engine.clone(), &p, 0.55, 40).unwrap();
    let weak = PerronContext::stable(&nc, engine, &p, 0.25, 40).unwrap();

    let base = 0.2 * strong.radius.min(weak.radius);
    let grid = vec![
        DVector::from_vec(vec![base, 0.0]),
        DVector::from_vec(vec![0.5 * base, 0.0]),
        DVector::from_vec(vec![-base, 0.0]),
    ];
    let chart = stable_chart(&strong, &grid).unwrap();
    for z in &chart.points {
        let sup = membership_weighted_sup(&weak, z).unwrap();
        assert!(
            sup <= weak.rho_2,
            "strong-weight point fails weak membership: {sup} vs {}",
            weak.rho_2
        );
    }

    let mut off = chart.points[0].clone();
    off[1] += 0.5 * weak.radius;
    let sup = membership_weighted_sup(&weak, &off).unwrap();
    assert!(
        sup > weak.rho_2,
        "point off the manifold passed membership: {sup} vs {}",
        weak.rho_2
    );
}

/// Stable and unstable charts at twenty points along the same orbit span
/// the plane transversally; for this saddle the tangents are the axes, so
/// the joint volume and both projection norms sit at one.
#[test]
fn transversal_charts_meet_at_twenty_base_points() {
    let t = tol();
    let nc = random_saddle(9);
    let origin = nc.base.origin_point();
    for k in 0..20 {
        let p = nc.base.shift(&origin, k);
        let engine = engine_at(&nc, &p, 400);
        let sctx = PerronContext::stable(&nc, engine.clone(), &p, 0.35, 12).unwrap();
        let uctx = PerronContext::unstable(&nc, engine, &p, 0.3, 12).unwrap();
        let sbase = 0.2 * sctx.radius;
        let ubase = 0.2 * uctx.radius;
        let sgrid = vec![
            DVector::from_vec(vec![sbase, 0.0]),
            DVector::from_vec(vec![-sbase, 0.0]),
        ];
        let ugrid = vec![
            DVector::from_vec(vec![0.0, ubase]),
            DVector::from_vec(vec![0.0, -ubase]),
        ];
        let schart = stable_chart(&sctx, &sgrid).unwrap();
        let uchart = unstable_chart(&uctx, &ugrid).unwrap();
        let report = transversality_check(&schart, &uchart, &t).unwrap();
        assert!(
            report.volume > 0.999,
            "joint volume {} at step {k}",
            report.volume
        );
        assert!((report.proj_stable_along_unstable.value - 1.0).abs() < 1e-3);
        assert!((report.proj_unstable_along_stable.value - 1.0).abs() < 1e-3);
    }
}
