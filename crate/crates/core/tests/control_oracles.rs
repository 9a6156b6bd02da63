mod common;

use approx::assert_relative_eq;
use common::Dense;
use ocstab::control::{evaluate_J, evaluate_hessian_form, solve_psi};
use ocstab::pde;
use ocstab::{ControlPoint, NodalField, Perturbation, ProblemData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const A: [[f64; 2]; 2] = [[0.3, 0.0], [0.0, 0.3]];
const B: [f64; 2] = [1.0, 0.5];

fn linear(n: usize) -> ProblemData {
    common::linear_problem(
        n,
        0.3,
        B,
        0.7,
        |x, y| (3.0 * x).sin() + y,
        |x, _| 0.1 * x,
        (-2.0, 2.0),
    )
}

fn random_control(prob: &ProblemData, rng: &mut ChaCha8Rng) -> NodalField {
    let (ua, ub) = prob.bounds();
    prob.mesh().zeros().map(|_| rng.random_range(ua..=ub))
}

fn random_direction(prob: &ProblemData, rng: &mut ChaCha8Rng) -> NodalField {
    prob.mesh().zeros().map(|_| rng.random_range(-1.0..=1.0))
}

#[test]
fn quadratic_objective_matches_dense_formula() {
    let prob = linear(8);
    let dense = Dense::new(prob.mesh());
    let c1 = vec![0.7; prob.mesh().node_count()];
    let q = common::quadratic(&dense, A, B, &c1, &prob.y_d().values, &prob.g().values, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let u = random_control(&prob, &mut rng);
        let y = common::matvec(&q.s, &u.values);
        let r: Vec<f64> = y.iter().zip(&prob.y_d().values).map(|(a, b)| a - b).collect();
        let want = 0.5 * dense.inner(&r, &r) + dense.inner(&prob.g().values, &u.values);
        let got = evaluate_J(&prob, &u, &Perturbation::none()).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-11);
    }
}

#[test]
fn gradient_and_hessian_match_dense_quadratic() {
    let prob = linear(8);
    let dense = Dense::new(prob.mesh());
    let c1 = vec![0.7; prob.mesh().node_count()];
    let eps = 0.05;
    let q = common::quadratic(&dense, A, B, &c1, &prob.y_d().values, &prob.g().values, eps);
    let pert = Perturbation::tikhonov(eps);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = random_control(&prob, &mut rng);
    let point = ControlPoint::new(&prob, &u, &pert).unwrap();
    let want: Vec<f64> = common::matvec(&q.h, &u.values)
        .iter()
        .zip(&q.c)
        .map(|(a, b)| a + b)
        .collect();
    let got = common::matvec(&dense.mass, &point.pack.gradient_density.values);
    for (p, w) in got.iter().zip(&want) {
        assert_relative_eq!(*p, *w, epsilon = 1e-12);
    }
    let v = random_direction(&prob, &mut rng);
    let w = random_direction(&prob, &mut rng);
    let hvw = common::dot(&v.values, &common::matvec(&q.h, &w.values));
    assert_relative_eq!(point.hessian_form(&v, &w).unwrap(), hvw, max_relative = 1e-11);
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let prob = common::cubic_problem_with_bounds(16, -20.0, 20.0);
    let pert = Perturbation::none();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for pair in 0..10 {
        let u = common::smooth_random(prob.mesh(), &mut rng).scale(3.0).map(|x| x + 4.0);
        let v = common::smooth_random(prob.mesh(), &mut rng).scale(100.0);
        let dj = ControlPoint::new(&prob, &u, &pert).unwrap().derivative(&v);
        let error = |t: f64| {
            let jp = evaluate_J(&prob, &u.axpy(t, &v), &pert).unwrap();
            let jm = evaluate_J(&prob, &u.axpy(-t, &v), &pert).unwrap();
            ((jp - jm) / (2.0 * t) - dj).abs()
        };
        let (e1, e2) = (error(1e-2), error(1e-3));
        let ratio = e2 / e1;
        assert!(
            (0.005..=0.05).contains(&ratio),
            "pair {pair}: ratio {ratio} ({e1:e}, {e2:e})"
        );
    }
}

#[test]
fn derivative_equals_linearized_tracking_term() {
    let prob = common::cubic_problem(12);
    let mesh = prob.mesh();
    let eta = mesh.interpolate(|x, y| x * y).unwrap();
    let pert = Perturbation {
        eta: Some(eta.clone()),
        tikhonov: 0.2,
        ..Perturbation::none()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let u = random_control(&prob, &mut rng);
        let v = random_direction(&prob, &mut rng);
        let point = ControlPoint::new(&prob, &u, &pert).unwrap();
        let z = point.z(&v).unwrap();
        let r = point.pack.y.sub(prob.y_d()).add(&eta);
        let want = mesh.inner(&r, &z) + mesh.inner(prob.g(), &v) + 0.2 * mesh.inner(&u, &v);
        let got = point.derivative(&v);
        assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
    }
}

#[test]
fn hessian_matches_central_differences_of_the_gradient() {
    let prob = common::cubic_problem_with_bounds(16, -20.0, 20.0);
    let pert = Perturbation::none();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..4 {
        let u = common::smooth_random(prob.mesh(), &mut rng).scale(3.0).map(|x| x + 4.0);
        let v = common::smooth_random(prob.mesh(), &mut rng).scale(100.0);
        let w = common::smooth_random(prob.mesh(), &mut rng);
        let h = evaluate_hessian_form(&prob, &u, &pert, &v, &w).unwrap();
        let error = |t: f64| {
            let gp = ControlPoint::new(&prob, &u.axpy(t, &v), &pert).unwrap().derivative(&w);
            let gm = ControlPoint::new(&prob, &u.axpy(-t, &v), &pert).unwrap().derivative(&w);
            ((gp - gm) / (2.0 * t) - h).abs()
        };
        let (e1, e2) = (error(1e-2), error(1e-3));
        let ratio = e2 / e1;
        assert!((0.005..=0.05).contains(&ratio), "ratio {ratio} ({e1:e}, {e2:e})");
    }
}

#[test]
fn hessian_is_symmetric() {
    let prob = common::cubic_problem(12);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u = random_control(&prob, &mut rng);
    let point = ControlPoint::new(&prob, &u, &Perturbation::none()).unwrap();
    let v = random_direction(&prob, &mut rng);
    let w = random_direction(&prob, &mut rng);
    let a = point.hessian_form(&v, &w).unwrap();
    let b = point.hessian_form(&w, &v).unwrap();
    assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
}

#[test]
fn psi_represents_the_hessian_form() {
    let prob = common::cubic_problem(16);
    let mesh = prob.mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = random_control(&prob, &mut rng);
    for eps in [0.0, 0.3] {
        let pert = Perturbation::tikhonov(eps);
        let point = ControlPoint::new(&prob, &u, &pert).unwrap();
        for _ in 0..10 {
            let v = random_direction(&prob, &mut rng);
            let psi = point.psi(&v).unwrap();
            let lhs = mesh.inner(&psi, &v);
            let rhs = point.hessian_form(&v, &v).unwrap() - eps * mesh.inner(&v, &v);
            assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn psi_for_linear_state_equation_is_adjoint_of_z() {
    let prob = linear(10);
    let mesh = prob.mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = random_control(&prob, &mut rng);
    let v = random_direction(&prob, &mut rng);
    let point = ControlPoint::new(&prob, &u, &Perturbation::none()).unwrap();
    let psi = solve_psi(&prob, &u, &Perturbation::none(), &v).unwrap();
    let z = point.z(&v).unwrap();
    let want = pde::solve_linear(mesh, prob.coeffs(), &mesh.constant(0.7), &z, true).unwrap();
    for (p, q) in psi.values.iter().zip(&want.values) {
        assert_relative_eq!(*p, *q, epsilon = 1e-13);
    }
}

#[test]
fn zero_data_give_zero_objective_and_gradient() {
    let prob = common::linear_problem(8, 1.0, [0.0, 0.0], 0.0, |_, _| 0.0, |_, _| 0.0, (-1.0, 1.0));
    let u = prob.mesh().zeros();
    let point = ControlPoint::new(&prob, &u, &Perturbation::none()).unwrap();
    assert_eq!(point.pack.j_value, 0.0);
    assert!(point.pack.gradient_density.values.iter().all(|&g| g == 0.0));
}
