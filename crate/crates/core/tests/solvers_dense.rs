//! Solvers against the same iterations carried out on the dense matrix.

mod common;

use common::{random_data, random_layers, rng, six_star, Dense};
use layertomo::operator::TomoOperator;
use layertomo::reconstruct::{kaczmarz, landweber, tikhonov_cg, SolveConfig, StepSchedule};
use nalgebra::DMatrix;

fn small() -> TomoOperator {
    // 8 nodes across 42 m with 4 arcmin of separation keeps the dense
    // matrix to a few hundred columns.
    six_star(8, 240.0, &[0.0, 6000.0], &[0.7, 0.3], true)
}

fn rel(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn adjoint_matches_weighted_transpose() {
    let op = small();
    let dense = Dense::assemble(&op);
    let psi = random_data(&op, &mut rng(1));
    let got = dense.layers_vec(&op.adjoint(&psi).unwrap());
    let want = dense.adjoint(&Dense::data_vec(&op, &psi));
    assert!(rel(&got, &want) < 1e-13, "{}", rel(&got, &want));
}

#[test]
fn landweber_iterates_match_dense_recursion() {
    let op = small();
    let dense = Dense::assemble(&op);
    let data = random_data(&op, &mut rng(2));
    let phi = Dense::data_vec(&op, &data);
    let beta = 0.3;
    let cfg = SolveConfig::landweber().with_step(beta).with_max_iterations(15).with_tolerance(0.0);
    let sol = landweber(&op, &data, &cfg).unwrap();

    let mut x = nalgebra::DVector::zeros(dense.cols.len());
    let mut residuals = vec![phi.norm()];
    for _ in 0..15 {
        let r = &phi - &dense.a * &x;
        x += dense.adjoint(&r) * beta;
        residuals.push((&phi - &dense.a * &x).norm());
    }
    assert!(rel(&dense.layers_vec(&sol.estimate), &x) < 1e-12);

    // Random data is not in the range of A; the residual still never grows.
    let sweeps = sol.history.sweep_residuals();
    assert_eq!(sweeps.len(), 16);
    for w in sweeps.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
    }
    // Data norms carry the pupil cell area; the dense ones do not.
    let area = op.pupil().grid().cell_area().sqrt();
    for (s, d) in sweeps.iter().zip(&residuals) {
        assert!((s - d * area).abs() <= 1e-10 * s, "{s} vs {}", d * area);
    }
}

#[test]
fn kaczmarz_substeps_match_dense_recursion() {
    let op = small();
    let dense = Dense::assemble(&op);
    let data = random_data(&op, &mut rng(3));
    let phi = Dense::data_vec(&op, &data);
    let schedule = StepSchedule::Harmonic(0.8);
    let cfg = SolveConfig::kaczmarz(schedule.clone()).with_max_iterations(3).with_tolerance(0.0);
    let sol = kaczmarz(&op, &data, &cfg).unwrap();

    let mut x = nalgebra::DVector::zeros(dense.cols.len());
    for sweep in 1..=3 {
        for g in 0..op.n_directions() {
            let rows = dense.direction_rows(g);
            let ag = dense.a.rows(rows.start, rows.len());
            let r = phi.rows(rows.start, rows.len()) - ag * &x;
            x += ag.tr_mul(&r).component_mul(&dense.gamma) * schedule.step(sweep, g);
        }
    }
    assert!(rel(&dense.layers_vec(&sol.estimate), &x) < 1e-12);
}

#[test]
fn tikhonov_cg_solves_the_dense_normal_equations() {
    let op = small();
    let dense = Dense::assemble(&op);
    let data = random_data(&op, &mut rng(4));
    let lambda = op.estimate_normal_norm(60, 0).unwrap();
    let alpha = 1e-2 * lambda;
    let cfg = SolveConfig::tikhonov_cg(alpha).with_max_iterations(500).with_tolerance(1e-12);
    let sol = tikhonov_cg(&op, &data, &cfg).unwrap();
    assert!(sol.history.converged);

    let n = dense.cols.len();
    let gram = DMatrix::from_diagonal(&dense.gamma) * dense.a.transpose() * &dense.a;
    let lhs = gram + DMatrix::identity(n, n) * alpha;
    let rhs = dense.adjoint(&Dense::data_vec(&op, &data));
    let want = lhs.lu().solve(&rhs).unwrap();
    let got = dense.layers_vec(&sol.estimate);
    assert!(rel(&got, &want) < 1e-9, "{}", rel(&got, &want));
}

#[test]
fn dense_operator_has_a_kernel() {
    // More layer unknowns than the data can pin down: the smallest singular
    // values vanish and the data cannot distinguish the corresponding
    // atmospheres.
    let op = small();
    let dense = Dense::assemble(&op);
    let svd = dense.a.clone().svd(false, false);
    let sv = svd.singular_values;
    let top = sv.max();
    let rank = sv.iter().filter(|s| **s > 1e-10 * top).count();
    assert!(rank < dense.cols.len(), "rank {rank} of {}", dense.cols.len());

    // A random atmosphere and its image under the normal operator agree with
    // the dense product.
    let phi = random_layers(&op, &mut rng(5));
    let got = dense.layers_vec(&op.normal_apply(&phi).unwrap());
    let want = dense.adjoint(&(&dense.a * dense.layers_vec(&phi)));
    assert!(rel(&got, &want) < 1e-13);
}

/// Every reconstruction in the range of `A*` is at least as far from the
/// truth as the weighted orthogonal projection of the truth onto that range,
/// `P = ΓAᵀ(AΓAᵀ)⁺A`.
#[test]
fn range_reconstructions_cannot_beat_the_projection() {
    let op = small();
    let dense = Dense::assemble(&op);
    let weighted = |v: &nalgebra::DVector<f64>| v.component_div(&dense.gamma).dot(v).sqrt();
    let truth = random_layers(&op, &mut rng(6));
    let x = dense.layers_vec(&truth);
    let inner = &dense.a * DMatrix::from_diagonal(&dense.gamma) * dense.a.transpose();
    let eps = 1e-10 * inner.norm();
    let pinv = inner.pseudo_inverse(eps).unwrap();
    let projected = dense.adjoint(&(pinv * (&dense.a * &x)));
    let bound = weighted(&(&x - &projected));
    assert!(bound > 0.1 * weighted(&x));

    let data = op.forward(&truth).unwrap();
    let lambda = op.estimate_normal_norm(60, 0).unwrap();
    let configs = [
        SolveConfig::landweber().with_max_iterations(200).with_tolerance(0.0),
        SolveConfig::kaczmarz(StepSchedule::Harmonic(1.0)).with_max_iterations(20).with_tolerance(0.0),
        SolveConfig::tikhonov_cg(1e-3 * lambda).with_max_iterations(300).with_tolerance(1e-12),
        SolveConfig::tikhonov_cg(1e-1 * lambda).with_max_iterations(300).with_tolerance(1e-12),
    ];
    for cfg in configs {
        let est = layertomo::reconstruct::solve(&op, &data, &cfg).unwrap().estimate;
        let err = weighted(&(dense.layers_vec(&est) - &x));
        assert!(err >= bound * (1.0 - 1e-9), "{:?}: {err} < {bound}", cfg.method);
    }
    // Arbitrary elements A*ψ of the range obey the same bound.
    let mut r = rng(7);
    for _ in 0..10 {
        let guess = dense.layers_vec(&op.adjoint(&random_data(&op, &mut r)).unwrap());
        assert!(weighted(&(guess - &x)) >= bound);
    }
}
