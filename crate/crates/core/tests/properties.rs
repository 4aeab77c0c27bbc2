mod common;

use common::{random_data, random_layers, rng};
use layertomo::analysis::{direction_ball, relative_error, strehl_from_variance};
use layertomo::field::{inner_data, inner_layers, sample_stencil, Grid2D};
use layertomo::geometry::{overlap_count, ring_directions, GeometrySpec, OverlapMap, ARCSEC};
use layertomo::operator::TomoOperator;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Setup {
    n: usize,
    guides: usize,
    radius_arcsec: f64,
    phase: f64,
    heights: Vec<f64>,
    weights: Vec<f64>,
    aligned: bool,
    seed: u64,
}

fn setups() -> impl Strategy<Value = Setup> {
    (
        6usize..40,
        1usize..=6,
        10.0..300.0f64,
        0.0..std::f64::consts::TAU,
        prop::collection::vec((500.0..6000.0f64, 0.05..1.0f64), 0..3),
        any::<bool>(),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(n, guides, radius_arcsec, phase, upper, ground, aligned, seed)| {
            let mut heights = vec![if ground { 0.0 } else { 300.0 }];
            let mut weights = vec![0.6];
            for (dh, w) in upper {
                heights.push(heights.last().unwrap() + dh);
                weights.push(w);
            }
            let total: f64 = weights.iter().sum();
            let weights = weights.iter().map(|w| w / total).collect();
            Setup { n, guides, radius_arcsec, phase, heights, weights, aligned, seed }
        })
}

fn spec_of(s: &Setup) -> GeometrySpec {
    let dirs = ring_directions(s.guides, s.radius_arcsec * ARCSEC, s.phase);
    GeometrySpec::new(21.0, dirs, s.heights.clone(), s.weights.clone()).unwrap()
}

/// `None` when snapping to the lattice merges two directions.
fn operator(s: &Setup) -> Option<TomoOperator> {
    let spec = spec_of(s);
    let op = TomoOperator::new(&spec, s.n).unwrap();
    if !s.aligned {
        return Some(op);
    }
    let spec = spec.aligned_to_lattice(op.spacing()).ok()?;
    Some(TomoOperator::new(&spec, s.n).unwrap())
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-11 * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_is_the_weighted_transpose(s in setups()) {
        let Some(op) = operator(&s) else { return Ok(()) };
        let mut r = rng(s.seed);
        let phi = random_layers(&op, &mut r);
        let psi = random_data(&op, &mut r);
        let lhs = inner_data(&op.forward(&phi).unwrap(), &psi).unwrap();
        let rhs = inner_layers(&phi, &op.adjoint(&psi).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * phi.norm() * psi.norm(), "{lhs} vs {rhs}");
    }

    #[test]
    fn forward_is_linear(s in setups(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let Some(op) = operator(&s) else { return Ok(()) };
        let mut r = rng(s.seed);
        let (x, y) = (random_layers(&op, &mut r), random_layers(&op, &mut r));
        let mut combo = x.scaled(a);
        combo.axpy(b, &y);
        let lhs = op.forward(&combo).unwrap();
        let rhs = op.forward(&x).unwrap().scaled(a).difference(&op.forward(&y).unwrap().scaled(-b)).unwrap();
        let scale = (a.abs() * x.norm() + b.abs() * y.norm()).max(1e-300);
        prop_assert!(lhs.difference(&rhs).unwrap().norm() <= 1e-12 * scale);
    }

    #[test]
    fn normal_operator_is_symmetric(s in setups()) {
        let Some(op) = operator(&s) else { return Ok(()) };
        let mut r = rng(s.seed);
        let (x, y) = (random_layers(&op, &mut r), random_layers(&op, &mut r));
        let a = inner_layers(&op.normal_apply(&x).unwrap(), &y).unwrap();
        let b = inner_layers(&x, &op.normal_apply(&y).unwrap()).unwrap();
        prop_assert!(close(a, b, x.norm() * y.norm() * op.n_directions() as f64));
        prop_assert!(inner_layers(&op.normal_apply(&x).unwrap(), &x).unwrap() >= 0.0);
    }

    #[test]
    fn aligned_direction_gram_is_identity(s in setups()) {
        let s = Setup { aligned: true, ..s };
        let Some(op) = operator(&s) else { return Ok(()) };
        let psi = random_data(&op, &mut rng(s.seed));
        for g in 0..op.n_directions() {
            let back = op.apply_direction_gram(g, psi.field(g)).unwrap();
            let err = back.difference(psi.field(g)).unwrap().norm();
            prop_assert!(err <= 1e-12 * psi.field(g).norm(), "g={g}: {err:e}");
        }
    }

    #[test]
    fn layer_inner_product_is_symmetric_bilinear_and_positive(s in setups(), a in -2.0..2.0f64) {
        let Some(op) = operator(&s) else { return Ok(()) };
        let mut r = rng(s.seed);
        let (x, y, z) = (random_layers(&op, &mut r), random_layers(&op, &mut r), random_layers(&op, &mut r));
        let xy = inner_layers(&x, &y).unwrap();
        prop_assert_eq!(xy, inner_layers(&y, &x).unwrap());
        let mut ax_z = x.scaled(a);
        ax_z.axpy(1.0, &z);
        let lhs = inner_layers(&ax_z, &y).unwrap();
        let rhs = a * xy + inner_layers(&z, &y).unwrap();
        prop_assert!(close(lhs, rhs, ax_z.norm() * y.norm() + x.norm() * y.norm()));
        prop_assert!(inner_layers(&x, &x).unwrap() > 0.0);
        let d = random_data(&op, &mut r);
        prop_assert!(inner_data(&d, &d).unwrap() > 0.0);
    }

    #[test]
    fn overlap_counts_match_independent_membership(s in setups(), res in 8usize..64) {
        let spec = spec_of(&s);
        let t = spec.aperture_radius();
        for l in 0..spec.n_layers() {
            let map = OverlapMap::compute(&spec, l, res).unwrap();
            let centers = spec.shifts(l);
            for (p, &w) in map.grid().nodes().zip(map.values()) {
                prop_assert!(w as usize <= spec.n_directions());
                let d: Vec<f64> = centers.iter().map(|c| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()).collect();
                if d.iter().any(|d| (d - t).abs() < 1e-9 * t) {
                    continue;
                }
                let count = d.iter().filter(|d| **d <= t).count() as u32;
                prop_assert_eq!(w, count);
                prop_assert_eq!(w as usize == spec.n_directions(), d.iter().all(|d| *d <= t));
            }
        }
    }

    #[test]
    fn single_overlap_propagates_upward(s in setups(), res in 16usize..48) {
        let spec = spec_of(&s);
        let t = spec.aperture_radius();
        let pupil = Grid2D::square([0.0, 0.0], t, res).unwrap();
        for g in 0..spec.n_directions() {
            for l in 0..spec.n_layers() - 1 {
                let (lo, hi) = (spec.shift(l, g), spec.shift(l + 1, g));
                for r in pupil.nodes().filter(|r| r[0].hypot(r[1]) <= t) {
                    let below = [r[0] + lo[0], r[1] + lo[1]];
                    if overlap_count(&spec, l, below) == 1 {
                        let above = [r[0] + hi[0], r[1] + hi[1]];
                        prop_assert_eq!(overlap_count(&spec, l + 1, above), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn stencil_weights_form_a_partition_of_unity(
        nx in 2usize..20, ny in 2usize..20, h in 0.01..5.0f64, fx in 0.0..1.0f64, fy in 0.0..1.0f64,
    ) {
        let grid = Grid2D::new([-1.0, 2.0], h, nx, ny).unwrap();
        let p = [-1.0 + fx * h * (nx - 1) as f64, 2.0 + fy * h * (ny - 1) as f64];
        let st = sample_stencil(&grid, p);
        prop_assert!(!st.is_empty());
        prop_assert!(st.entries().iter().all(|(_, w)| (0.0..=1.0).contains(w)));
        prop_assert!((st.weight_sum() - 1.0).abs() < 1e-12);
        let outside = sample_stencil(&grid, [p[0], 2.0 + h * ny as f64]);
        prop_assert!(outside.is_empty());
        prop_assert_eq!(outside.apply(&vec![1.0; grid.len()]), 0.0);
    }

    #[test]
    fn strehl_is_bounded_and_decreasing(a in 0.0..50.0f64, b in 0.0..50.0f64) {
        let (sa, sb) = (strehl_from_variance(a), strehl_from_variance(b));
        prop_assert!((0.0..=1.0).contains(&sa));
        if a < b {
            prop_assert!(sa >= sb);
        }
    }

    #[test]
    fn overlap_strata_partition_the_layer_nodes(s in setups()) {
        let Some(op) = operator(&s) else { return Ok(()) };
        let mut r = rng(s.seed);
        let (x, y) = (random_layers(&op, &mut r), random_layers(&op, &mut r));
        let maps: Vec<_> = (0..op.n_layers()).map(|l| op.overlap_map(l).unwrap()).collect();
        let err = relative_error(&x, &y, &maps).unwrap();
        let nodes: usize = err.strata.iter().map(|s| s.nodes).sum();
        let active: usize = op.layout().layers().iter().map(|m| m.active_count()).sum();
        prop_assert_eq!(nodes, active);
        for stratum in &err.strata {
            prop_assert_eq!(stratum.error.is_some(), stratum.nodes > 0);
        }
        let d = x.difference(&y).unwrap().norm().powi(2);
        prop_assert!(close(err.global_true_normalized.unwrap() * x.norm().powi(2), d, d));
    }
}

/// `(A*φ)⁽ˡ⁾(r + h_l α_g) = γ_l φ_g(r)` wherever the translated ball sees
/// direction `g` alone, exactly for aligned shifts.
#[test]
fn adjoint_on_balls_copies_the_scaled_data() {
    for n in [64, 96, 128] {
        let op = common::six_star(n, 60.0, &[0.0, 4000.0, 12000.0], &[0.75, 0.15, 0.1], true);
        let psi = random_data(&op, &mut rng(n as u64));
        let image = op.adjoint(&psi).unwrap();
        let spec = op.spec();
        let pupil = op.pupil().grid();
        for g in 0..op.n_directions() {
            let ball = direction_ball(&op, g).unwrap();
            let base = op.layout().layer(ball.layer).grid();
            let mut checked = 0;
            for x in base.nodes().filter(|x| ball.contains(*x)) {
                let sb = spec.shift(ball.layer, g);
                let r = pupil.nearest_node([x[0] - sb[0], x[1] - sb[1]]).unwrap();
                let want = psi.field(g).values()[r];
                for l in ball.layer..op.n_layers() {
                    let sl = spec.shift(l, g);
                    let grid = op.layout().layer(l).grid();
                    let p = pupil.node_at(r);
                    let j = grid.nearest_node([p[0] + sl[0], p[1] + sl[1]]).unwrap();
                    let gamma = op.layout().weights()[l];
                    let got = image.layer(l)[j];
                    assert!((got - gamma * want).abs() <= 1e-13 * want.abs().max(1.0), "n={n} g={g} l={l}");
                }
                checked += 1;
            }
            assert!(checked > 0);
        }
    }
}
