mod common;

use common::six_star;
use layertomo::analysis::{build_nullspace_witness_for, project_to_range_of_adjoint, InvariantChecker};
use layertomo::field::LayerStack;
use layertomo::operator::TomoOperator;
use layertomo::turbulence::{generate_atmosphere, TurbulenceSpec};

const HEIGHTS: [f64; 3] = [0.0, 4000.0, 12000.0];
const WEIGHTS: [f64; 3] = [0.75, 0.15, 0.1];

fn atmosphere(op: &TomoOperator, seed: u64) -> LayerStack {
    let tspec = TurbulenceSpec::new(0.157, 25.0, WEIGHTS.to_vec(), seed).unwrap();
    generate_atmosphere(&tspec, op.spec(), op.layout()).unwrap()
}

fn bump(l: usize, o: [f64; 2]) -> f64 {
    // A smooth bump of a few hundred nanometres, different on every layer.
    let k = 0.6 + 0.2 * l as f64;
    4e-7 * (k * o[0]).cos() * (0.5 * k * o[1]).cos()
}

fn all(op: &TomoOperator) -> Vec<usize> {
    (0..op.n_directions()).collect()
}

#[test]
fn witness_changes_the_atmosphere_but_not_the_data() {
    let op = six_star(96, 60.0, &HEIGHTS, &WEIGHTS, true);
    let phi = atmosphere(&op, 21);
    let w = build_nullspace_witness_for(&op, &phi, &all(&op), bump, 0.3).unwrap();
    assert!(w.relative_discrepancy <= 1e-12, "{:e}", w.relative_discrepancy);
    assert!(w.relative_distance > 1e-3, "{}", w.relative_distance);
    assert_eq!(w.regions.len(), 6 * 2);
}

#[test]
fn projection_cannot_see_the_witness() {
    let op = six_star(96, 60.0, &HEIGHTS, &WEIGHTS, true);
    let phi = atmosphere(&op, 22);
    let w = build_nullspace_witness_for(&op, &phi, &all(&op), bump, 0.3).unwrap();
    let p = project_to_range_of_adjoint(&op, &w.original).unwrap();
    let q = project_to_range_of_adjoint(&op, &w.modified).unwrap();
    assert!(q.difference(&p).unwrap().norm() <= 1e-12 * p.norm());
    // Both projections carry the range-of-adjoint structure; the witness
    // itself does not.
    let checker = InvariantChecker::new(&op).unwrap();
    assert!(checker.max_residual(&op, &p).unwrap() <= 1e-10);
    assert!(checker.max_residual(&op, &w.modified).unwrap() > 1e-3);
}

/// Off the lattice the compensation on the top layer is interpolated, so the
/// data move by the interpolation error. The balls themselves shift with the
/// grid, which makes single refinements noisy; two halvings of the spacing
/// must still gain well over the factor 4 of a first-order error.
#[test]
fn off_lattice_witness_discrepancy_is_second_order() {
    let per_distance: Vec<f64> = [129, 257, 513]
        .into_iter()
        .map(|n| {
            let op = six_star(n, 210.0, &HEIGHTS, &WEIGHTS, false);
            let phi = LayerStack::from_fn(op.layout().clone(), |l, p| {
                1e-6 * (0.1 * p[0] + 0.05 * l as f64 * p[1]).sin()
            });
            let w = build_nullspace_witness_for(&op, &phi, &all(&op), bump, 0.3).unwrap();
            w.data_modified.difference(&w.data_original).unwrap().norm() / w.layer_distance
        })
        .collect();
    for pair in per_distance.windows(2) {
        assert!(pair[0] / pair[1] > 2.5, "{per_distance:?}");
    }
    assert!(per_distance[0] / per_distance[2] > 10.0, "{per_distance:?}");
}
