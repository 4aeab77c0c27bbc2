mod common;

use common::{random_data, random_layers, rng, six_star};
use layertomo::analysis::InvariantChecker;
use layertomo::field::PupilField;
use layertomo::reconstruct::{kaczmarz_observed, solve_observed, SolveConfig, StepSchedule};

const HEIGHTS: [f64; 3] = [0.0, 4000.0, 12000.0];
const WEIGHTS: [f64; 3] = [0.75, 0.15, 0.1];

#[test]
fn unit_kaczmarz_step_fits_the_updated_direction_exactly() {
    // Aligned shifts make A_g A_g* the identity, so β = 1 projects onto the
    // data of direction g. Inconsistent data then cycles without converging.
    let op = six_star(64, 60.0, &HEIGHTS, &WEIGHTS, true);
    let data = random_data(&op, &mut rng(7));
    let cfg = SolveConfig::kaczmarz(StepSchedule::Constant(1.0)).with_max_iterations(12).with_tolerance(1e-9);
    let sol = kaczmarz_observed(&op, &data, &cfg, |_, _| {}).unwrap();
    for rec in &sol.history.records[1..] {
        let g = rec.direction.unwrap();
        assert!(rec.direction_residuals[g] <= 1e-12 * data.norm(), "{rec:?}");
    }
    assert!(!sol.history.converged);
    // Every sweep ends on the last direction's data and misfits the others.
    let sweeps = sol.history.sweep_residuals();
    assert!(sweeps[1..].iter().all(|r| *r > 0.9 * data.norm()), "{sweeps:?}");
}

#[test]
fn kaczmarz_never_moves_away_from_a_consistent_solution() {
    let op = six_star(64, 60.0, &HEIGHTS, &WEIGHTS, true);
    let truth = random_layers(&op, &mut rng(8));
    let data = op.forward(&truth).unwrap();
    for schedule in [StepSchedule::Constant(1.0), StepSchedule::Harmonic(1.5)] {
        let cfg = SolveConfig::kaczmarz(schedule.clone()).with_max_iterations(5).with_tolerance(0.0);
        let mut errors = Vec::new();
        kaczmarz_observed(&op, &data, &cfg, |_, x| errors.push(x.difference(&truth).unwrap().norm())).unwrap();
        assert_eq!(errors.len(), 1 + 5 * 6);
        for w in errors.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{schedule:?}: {w:?}");
        }
        assert!(errors.last().unwrap() < &errors[0]);
    }
}

#[test]
fn harmonic_sweeps_reduce_the_residual_of_consistent_data() {
    let op = six_star(64, 60.0, &HEIGHTS, &WEIGHTS, true);
    let truth = random_layers(&op, &mut rng(9));
    let data = op.forward(&truth).unwrap();
    let cfg = SolveConfig::kaczmarz(StepSchedule::Harmonic(1.0)).with_max_iterations(8).with_tolerance(0.0);
    let sol = kaczmarz_observed(&op, &data, &cfg, |_, _| {}).unwrap();
    let sweeps = sol.history.sweep_residuals();
    assert_eq!(sweeps.len(), 9);
    assert!(sweeps[8] < 0.5 * sweeps[0], "{sweeps:?}");
}

#[test]
fn every_iterate_from_zero_keeps_the_scaling_invariant() {
    let op = six_star(64, 60.0, &HEIGHTS, &WEIGHTS, true);
    let checker = InvariantChecker::new(&op).unwrap();
    assert!(!checker.balls().is_empty());
    let data = random_data(&op, &mut rng(10));
    let configs = [
        SolveConfig::landweber().with_max_iterations(10),
        SolveConfig::kaczmarz(StepSchedule::Harmonic(1.0)).with_max_iterations(3),
        SolveConfig::tikhonov_cg(0.1).with_max_iterations(10),
    ];
    for cfg in configs {
        let mut worst = 0.0_f64;
        let mut count = 0;
        solve_observed(&op, &data, &cfg, |_, x| {
            worst = worst.max(checker.max_residual(&op, x).unwrap());
            count += 1;
        })
        .unwrap();
        assert!(count > 3);
        assert!(worst <= 1e-10, "{:?}: {worst:e}", cfg.method);
    }
}

#[test]
fn generic_initial_guess_breaks_the_invariant() {
    let op = six_star(64, 60.0, &HEIGHTS, &WEIGHTS, true);
    let checker = InvariantChecker::new(&op).unwrap();
    let x0 = random_layers(&op, &mut rng(11));
    assert!(checker.max_residual(&op, &x0).unwrap() > 0.1);
    // Iterating from it leaves the offending component in place.
    let data = random_data(&op, &mut rng(12));
    let cfg = SolveConfig::landweber().with_max_iterations(5).with_initial(x0);
    let sol = layertomo::reconstruct::landweber(&op, &data, &cfg).unwrap();
    assert!(checker.max_residual(&op, &sol.estimate).unwrap() > 0.1);
}

#[test]
fn single_direction_adjoint_stays_on_its_footprints() {
    let op = six_star(48, 60.0, &HEIGHTS, &WEIGHTS, false);
    let psi = PupilField::from_fn(op.pupil().clone(), |p| 1.0 + p[0] - 0.5 * p[1]);
    let spec = op.spec();
    let t = spec.aperture_radius();
    let reach = t + std::f64::consts::SQRT_2 * op.spacing() + 1e-9;
    for g in 0..op.n_directions() {
        let image = op.adjoint_direction(g, &psi).unwrap();
        for l in 0..op.n_layers() {
            let c = spec.shift(l, g);
            let grid = op.layout().layer(l).grid();
            let mut inside = 0;
            for (i, v) in image.layer(l).iter().enumerate() {
                let p = grid.node_at(i);
                let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                if d > reach {
                    assert_eq!(*v, 0.0, "g={g} l={l} node {i} at distance {d}");
                } else if *v != 0.0 {
                    inside += 1;
                }
            }
            assert!(inside > 0);
        }
    }
}
