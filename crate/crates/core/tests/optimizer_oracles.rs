mod common;

use common::Dense;
use ocstab::diagnostics::measure_condition_probe;
use ocstab::optimizer::{
    is_admissible, optimize, solve_control_problem, InitialGuess, OptimizerConfig,
};
use ocstab::{CoefficientSet, ControlPoint, Mesh, NormKind, Perturbation, ProblemData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const A: [[f64; 2]; 2] = [[0.2, 0.0], [0.0, 0.2]];
const B: [f64; 2] = [1.0, 0.5];

fn convex(n: usize, bounds: (f64, f64)) -> ProblemData {
    common::linear_problem(
        n,
        0.2,
        B,
        0.0,
        |x, y| 20.0 * (x - 0.5) * (y - 0.3),
        |x, _| 0.01 * x,
        bounds,
    )
}

fn dense_optimum(prob: &ProblemData, eps: f64) -> Vec<f64> {
    let dense = Dense::new(prob.mesh());
    let zero = vec![0.0; prob.mesh().node_count()];
    let q = common::quadratic(&dense, A, B, &zero, &prob.y_d().values, &prob.g().values, eps);
    let (ua, ub) = prob.bounds();
    common::box_qp(&q.h, &q.c, ua, ub)
}

fn cfg(seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        rng_seed: seed,
        restart_count: 2,
        ..OptimizerConfig::default()
    }
}

#[test]
fn convex_problem_matches_dense_kkt_oracle() {
    let prob = convex(8, (-0.5, 0.5));
    let want = dense_optimum(&prob, 0.1);
    let res = solve_control_problem(&prob, &Perturbation::tikhonov(0.1), &cfg(1), &InitialGuess::Random)
        .unwrap();
    let mesh = prob.mesh();
    let diff = res.u_star.sub(&common::field(mesh, want.clone()));
    assert!(mesh.norm(&diff, NormKind::L2) <= 1e-6, "{}", mesh.norm(&diff, NormKind::L2));
    let lower = want.iter().filter(|&&u| u <= -0.5 + 1e-12).count();
    let upper = want.iter().filter(|&&u| u >= 0.5 - 1e-12).count();
    assert!(lower > 0 && upper > 0, "both bounds should be active");
}

#[test]
fn interior_optimum_is_unconstrained_minimizer() {
    let prob = convex(8, (-1e3, 1e3));
    let want = dense_optimum(&prob, 0.1);
    let mesh = prob.mesh();
    assert!(want.iter().all(|u| u.abs() < 1e2));
    let res = solve_control_problem(
        &prob,
        &Perturbation::tikhonov(0.1),
        &cfg(2),
        &InitialGuess::Given(mesh.zeros()),
    )
    .unwrap();
    assert!(res.stationarity_residual <= 1e-8);
    let diff = res.u_star.sub(&common::field(mesh, want));
    assert!(mesh.norm(&diff, NormKind::L2) <= 1e-6);
}

fn bang_bang(n: usize) -> ProblemData {
    let mesh = Mesh::new(n).unwrap();
    let coeffs = CoefficientSet::uniform(
        &mesh,
        [[0.1, 0.0], [0.0, 0.1]],
        [0.5, 0.2],
        mesh.zeros(),
        mesh.constant(0.5),
        mesh.constant(1.0),
    )
    .unwrap();
    let g = mesh.interpolate(|x, _| (x - 0.5).abs()).unwrap();
    ProblemData::new(mesh.clone(), coeffs, mesh.zeros(), g, 0.0, 1.0).unwrap()
}

#[test]
fn positive_switching_function_gives_lower_bound_control() {
    let prob = bang_bang(16);
    let res = solve_control_problem(&prob, &Perturbation::none(), &cfg(3), &InitialGuess::Random)
        .unwrap();
    assert!(res.u_star.values.iter().all(|&u| u == 0.0));
    let sigma = &res.pack.gradient_density;
    assert!(sigma.min() >= 0.0);
    let grid = [1e-3, 1e-2, 1e-1];
    for s in measure_condition_probe(prob.mesh(), sigma, &grid).unwrap() {
        assert!((s.ratio - 2.0).abs() < 1e-9, "{s:?}");
    }
}

#[test]
fn stationary_start_stops_immediately() {
    let prob = convex(8, (-0.5, 0.5));
    let pert = Perturbation::tikhonov(0.1);
    let first = solve_control_problem(&prob, &pert, &cfg(4), &InitialGuess::Random).unwrap();
    let again = optimize(&prob, &pert, &cfg(4), &InitialGuess::Given(first.u_star.clone())).unwrap();
    assert!(again.converged);
    assert!(again.iterations <= 1, "{} iterations", again.iterations);
}

#[test]
fn accepted_iterates_decrease_the_objective() {
    let prob = common::cubic_problem(12);
    let res = optimize(&prob, &Perturbation::none(), &cfg(5), &InitialGuess::Random).unwrap();
    assert!(res.converged);
    for w in res.j_history.windows(2) {
        assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
    }
    assert!(is_admissible(prob.mesh(), &res.u_star, 0.0, 1.0));
    assert_eq!(res.restarts.len(), 2);
}

#[test]
fn optimizer_is_deterministic() {
    let prob = common::cubic_problem(10);
    let run = || optimize(&prob, &Perturbation::none(), &cfg(6), &InitialGuess::Random).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.u_star.values, b.u_star.values);
    assert_eq!(a.j_history, b.j_history);
    assert_eq!(a.restart_values, b.restart_values);
}

#[test]
fn optimum_satisfies_the_variational_inequality() {
    let prob = common::cubic_problem(12);
    let res = solve_control_problem(&prob, &Perturbation::none(), &cfg(7), &InitialGuess::Random)
        .unwrap();
    let point = ControlPoint::new(&prob, &res.u_star, &Perturbation::none()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let u = prob.mesh().zeros().map(|_| rng.random_range(0.0..=1.0));
        let dj = point.derivative(&u.sub(&res.u_star));
        assert!(dj >= -1e-7, "J'(u*)(u - u*) = {dj}");
    }
}
