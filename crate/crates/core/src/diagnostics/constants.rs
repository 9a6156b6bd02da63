//! Empirical sup-ratios standing in for the analytic constants of the
//! state equation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::{ControlPoint, Perturbation, ProblemData};
use crate::error::Result;
use crate::mesh::{Mesh, NodalField, NormKind};
use crate::optimizer::random_control;
use crate::pde::{self, CoefficientSet};

/// `1.01 max (||y_u||_{H10} + ||y_u||_inf)` over random admissible `u`.
pub fn state_bound(prob: &ProblemData, n_samples: usize, seed: u64) -> Result<f64> {
    let mesh = prob.mesh();
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let u = random_control(prob, seed, k as u64);
            let (y, _) = pde::solve_state(mesh, prob.coeffs(), &u, None, &prob.newton)?;
            Ok(mesh.norm(&y, NormKind::H10) + mesh.norm(&y, NormKind::Linf))
        })
        .collect::<Result<_>>()?;
    Ok(1.01 * values.into_iter().fold(0.0, f64::max))
}

/// `1.01 max ||phi_u||_inf` over random admissible `u`.
pub fn adjoint_bound(prob: &ProblemData, n_samples: usize, seed: u64) -> Result<f64> {
    let mesh = prob.mesh();
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let u = random_control(prob, seed, k as u64);
            let point = ControlPoint::new(prob, &u, &Perturbation::none())?;
            Ok(mesh.norm(&point.pack.phi, NormKind::Linf))
        })
        .collect::<Result<_>>()?;
    Ok(1.01 * values.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GardingReport {
    /// Smallest `C >= 0` with `<A v, v> >= lambda_A/4 |v|_{H1}^2 - C ||v||^2`
    /// on every sample.
    pub constant: f64,
    /// Smallest `<A v, v> / ||v||_{L2}^2`.
    pub min_ratio: f64,
}

/// Gårding constant of the discrete operator over random interior vectors.
///
/// Even samples are nodal noise, odd samples random combinations of the
/// first sine modes.
pub fn garding_constant(
    mesh: &Mesh,
    coeffs: &CoefficientSet,
    n_samples: usize,
    seed: u64,
) -> Result<GardingReport> {
    let op = pde::assemble_operator(mesh, coeffs, &mesh.zeros(), false)?;
    let mut constant = 0.0f64;
    let mut min_ratio = f64::INFINITY;
    for k in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let v = if k % 2 == 0 {
            let mut v = mesh.zeros();
            for &node in mesh.interior_nodes() {
                v.values[node] = rng.random_range(-1.0..=1.0);
            }
            v
        } else {
            let c: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..=1.0)).collect();
            mesh.interpolate(|x, y| {
                let pi = std::f64::consts::PI;
                (0..9)
                    .map(|m| {
                        let (p, q) = ((m / 3 + 1) as f64, (m % 3 + 1) as f64);
                        c[m] * (p * pi * x).sin() * (q * pi * y).sin()
                    })
                    .sum()
            })?
        };
        let vi = mesh.restrict(&v.values);
        let q: f64 = op.matvec(&vi).iter().zip(&vi).map(|(a, b)| a * b).sum();
        let h1 = mesh.norm(&v, NormKind::H10).powi(2);
        let l2 = mesh.norm(&v, NormKind::L2).powi(2);
        if l2 > 0.0 {
            constant = constant.max((0.25 * coeffs.lambda_a() * h1 - q) / l2);
            min_ratio = min_ratio.min(q / l2);
        }
    }
    Ok(GardingReport {
        constant,
        min_ratio,
    })
}

/// `max ||y||_{L2} / ||h||_{L1}` over random `a >= 0` and random `h`, for
/// the forward and the adjoint problem.
///
/// Each `h` is a nonnegative cone bump of random center and radius in
/// `[0.1, 0.3]`, so the draws do not depend on the mesh. Half of the
/// samples use `a = 0`, the others a smooth random `a` in `[0, 10]`.
pub fn linear_source_ratio(
    mesh: &Mesh,
    coeffs: &CoefficientSet,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let ratios: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let a: NodalField = if k % 4 < 2 {
                mesh.zeros()
            } else {
                let (c, p, q) = (
                    rng.random_range(0.0..=5.0),
                    rng.random_range(0.0..=6.0),
                    rng.random_range(0.0..=6.0),
                );
                mesh.interpolate(|x, y| c * (1.0 + (p * x + q * y).sin()))?
            };
            let center = [rng.random_range(0.1..=0.9), rng.random_range(0.1..=0.9)];
            let radius = rng.random_range(0.1..=0.3);
            let h = mesh.interpolate(|x, y| {
                (1.0 - (x - center[0]).hypot(y - center[1]) / radius).max(0.0)
            })?;
            let l1 = mesh.norm(&h, NormKind::L1);
            if l1 == 0.0 {
                return Ok(0.0);
            }
            let adjoint = k % 2 == 1;
            let y = pde::solve_linear(mesh, coeffs, &a, &h, adjoint)?;
            Ok(mesh.norm(&y, NormKind::L2) / l1)
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}
