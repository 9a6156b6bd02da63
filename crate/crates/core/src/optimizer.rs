//! Projected gradient descent over the admissible box.
//!
//! Steps use the gradient in the lumped-mass metric,
//! `g_hat = M_L^{-1} M sigma`. Since the box is nodewise and `M_L` is
//! diagonal, `u = P(u - g_hat)` holds exactly when the discrete variational
//! inequality `<sigma, v - u>_M >= 0` holds for every admissible nodal `v`.
//! Trial steps use the Barzilai-Borwein length, safeguarded by Armijo
//! backtracking along the projection arc, so accepted objective values never
//! increase.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::control::{evaluate_objective, AdjointPack, ControlPoint, Perturbation, ProblemData};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField, NormKind};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub armijo_c: f64,
    pub step_init: f64,
    pub step_shrink: f64,
    pub stationarity_tol: f64,
    pub restart_count: usize,
    /// Taken from the experiment seed in config files.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            armijo_c: 1e-4,
            step_init: 1.0,
            step_shrink: 0.5,
            stationarity_tol: 1e-8,
            restart_count: 5,
            rng_seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("optimizer.{field}"), msg));
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c", "must lie in (0, 1)");
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return bad("step_shrink", "must lie in (0, 1)");
        }
        if !(self.stationarity_tol > 0.0) {
            return bad("stationarity_tol", "must be positive");
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return bad("step_init", "must be positive");
        }
        if self.restart_count == 0 {
            return bad("restart_count", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum InitialGuess {
    Given(NodalField),
    /// Nodewise uniform in `[u_a, u_b]`, one draw per restart.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartSummary {
    pub restart: usize,
    pub j_value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub u_star: NodalField,
    pub pack: AdjointPack,
    pub stationarity_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective values of the accepted iterates of the returned run.
    pub j_history: Vec<f64>,
    /// `(J, residual)` for every restart, in restart order.
    pub restart_values: Vec<(f64, f64)>,
    pub restarts: Vec<RestartSummary>,
}

pub fn project_admissible(u: &NodalField, u_a: f64, u_b: f64) -> NodalField {
    u.map(|v| v.clamp(u_a, u_b))
}

/// `||u - P(u - g_hat)||_{L2}`.
pub fn stationarity_residual(
    prob: &ProblemData,
    u: &NodalField,
    pert: &Perturbation,
) -> Result<f64> {
    let pack = ControlPoint::new(prob, u, pert)?.pack;
    Ok(residual_from_gradient(prob, u, &pack.lumped_gradient(prob.mesh())))
}

fn residual_from_gradient(prob: &ProblemData, u: &NodalField, grad: &NodalField) -> f64 {
    let (ua, ub) = prob.bounds();
    let step = project_admissible(&u.axpy(-1.0, grad), ua, ub);
    prob.mesh().norm(&u.sub(&step), NormKind::L2)
}

/// Runs projected gradient from one or several starting points and returns
/// the converged run with the lowest objective, or the run with the
/// smallest residual if none converged.
pub fn optimize(
    prob: &ProblemData,
    pert: &Perturbation,
    cfg: &OptimizerConfig,
    init: &InitialGuess,
) -> Result<OptimizeResult> {
    cfg.validate()?;
    let starts: Vec<NodalField> = match init {
        InitialGuess::Given(u0) => {
            prob.mesh().check(u0)?;
            let (ua, ub) = prob.bounds();
            vec![project_admissible(u0, ua, ub)]
        }
        InitialGuess::Random => (0..cfg.restart_count)
            .map(|k| random_control(prob, cfg.rng_seed, k as u64))
            .collect(),
    };

    let runs: Vec<Result<Run>> = starts
        .par_iter()
        .map(|u0| descend(prob, pert, cfg, u0.clone()))
        .collect();

    let mut summaries = Vec::with_capacity(runs.len());
    let mut best: Option<(usize, Run)> = None;
    let mut first_error = None;
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                info!(
                    "restart {k}: J = {:.10e}, residual = {:.3e}, {} iterations{}",
                    run.pack.j_value,
                    run.residual,
                    run.iterations,
                    if run.converged { "" } else { " (not converged)" }
                );
                summaries.push(RestartSummary {
                    restart: k,
                    j_value: run.pack.j_value,
                    residual: run.residual,
                    iterations: run.iterations,
                    converged: run.converged,
                });
                let better = match &best {
                    None => true,
                    Some((_, b)) => match (run.converged, b.converged) {
                        (true, false) => true,
                        (false, true) => false,
                        (true, true) => run.pack.j_value < b.pack.j_value,
                        (false, false) => run.residual < b.residual,
                    },
                };
                if better {
                    best = Some((k, run));
                }
            }
            Err(e) => {
                info!("restart {k} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    let Some((_, run)) = best else {
        return Err(first_error.expect("at least one restart"));
    };
    Ok(OptimizeResult {
        u_star: run.u,
        pack: run.pack,
        stationarity_residual: run.residual,
        iterations: run.iterations,
        converged: run.converged,
        j_history: run.j_history,
        restart_values: summaries.iter().map(|s| (s.j_value, s.residual)).collect(),
        restarts: summaries,
    })
}

/// As [`optimize`], failing unless some run reached the stationarity
/// tolerance.
pub fn solve_control_problem(
    prob: &ProblemData,
    pert: &Perturbation,
    cfg: &OptimizerConfig,
    init: &InitialGuess,
) -> Result<OptimizeResult> {
    let res = optimize(prob, pert, cfg, init)?;
    if !res.converged {
        return Err(Error::OptimizerFailure {
            best_residual: res.stationarity_residual,
        });
    }
    Ok(res)
}

/// Random admissible control for restart `k`.
pub fn random_control(prob: &ProblemData, seed: u64, k: u64) -> NodalField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    let (ua, ub) = prob.bounds();
    let mesh = prob.mesh();
    let values = (0..mesh.node_count())
        .map(|_| rng.random_range(ua..=ub))
        .collect();
    mesh.field(values).expect("node count matches")
}

struct Run {
    u: NodalField,
    pack: AdjointPack,
    residual: f64,
    iterations: usize,
    converged: bool,
    j_history: Vec<f64>,
}

fn descend(
    prob: &ProblemData,
    pert: &Perturbation,
    cfg: &OptimizerConfig,
    u0: NodalField,
) -> Result<Run> {
    let mesh = prob.mesh();
    let (ua, ub) = prob.bounds();
    let lumped = mesh.lumped_mass();

    let mut u = u0;
    let mut pack = ControlPoint::new(prob, &u, pert)?.pack;
    let mut grad = pack.lumped_gradient(mesh);
    let mut residual = residual_from_gradient(prob, &u, &grad);
    let mut j_history = vec![pack.j_value];
    let mut alpha = cfg.step_init;
    let mut iterations = 0;

    while residual > cfg.stationarity_tol && iterations < cfg.max_iters {
        let mut t = alpha;
        let accepted = loop {
            let trial = project_admissible(&u.axpy(-t, &grad), ua, ub);
            let d = trial.sub(&u);
            let slope = lumped_dot(lumped, &grad, &d);
            if slope >= 0.0 {
                break None;
            }
            match evaluate_objective(prob, &trial, pert, Some(&pack.y)) {
                Ok((j, _, _)) if j <= pack.j_value + cfg.armijo_c * slope => break Some(trial),
                Ok(_) => {}
                Err(e) if e.is_solver_failure() => {}
                Err(e) => return Err(e),
            }
            t *= cfg.step_shrink;
            if t < 1e-20 * cfg.step_init {
                break None;
            }
        };
        let Some(next) = accepted else {
            debug!("line search stalled at residual {residual:.3e} (step {alpha:.3e})");
            break;
        };
        if iterations % 100 == 0 {
            debug!("iteration {iterations}: J = {:.12e}, residual {residual:.3e}, step {alpha:.3e}, accepted {t:.3e}", pack.j_value);
        }

        let next_pack = ControlPoint::with_guess(prob, &next, pert, Some(&pack.y))?.pack;
        let next_grad = next_pack.lumped_gradient(mesh);
        let s = next.sub(&u);
        let dg = next_grad.sub(&grad);
        let ss = lumped_dot(lumped, &s, &s);
        let sy = lumped_dot(lumped, &s, &dg);
        alpha = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            cfg.step_init
        };

        u = next;
        pack = next_pack;
        grad = next_grad;
        residual = residual_from_gradient(prob, &u, &grad);
        j_history.push(pack.j_value);
        iterations += 1;
    }

    Ok(Run {
        converged: residual <= cfg.stationarity_tol,
        u,
        pack,
        residual,
        iterations,
        j_history,
    })
}

fn lumped_dot(lumped: &[f64], a: &NodalField, b: &NodalField) -> f64 {
    lumped
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(m, (x, y))| m * x * y)
        .sum()
}

/// Admissibility of every node, without tolerance.
pub fn is_admissible(mesh: &Mesh, u: &NodalField, u_a: f64, u_b: f64) -> bool {
    mesh.check(u).is_ok() && u.values.iter().all(|&v| v >= u_a && v <= u_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::CoefficientSet;

    #[test]
    fn projection_examples() {
        let mesh = Mesh::new(2).unwrap();
        let u = mesh.constant(10.0);
        assert_eq!(project_admissible(&u, 0.0, 1.0).values, vec![1.0; 9]);
        let mut mixed = mesh.zeros();
        mixed.values[..3].copy_from_slice(&[-5.0, 0.5, 7.0]);
        let p = project_admissible(&mixed, 0.0, 1.0);
        assert_eq!(&p.values[..3], &[0.0, 0.5, 1.0]);
        let ok = mesh.constant(0.25);
        assert_eq!(project_admissible(&ok, 0.0, 1.0), ok);
    }

    #[test]
    fn config_validation() {
        let mut cfg = OptimizerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.armijo_c = 1.0;
        assert!(cfg.validate().is_err());
        cfg = OptimizerConfig {
            step_shrink: 0.0,
            ..OptimizerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn positive_gradient_at_lower_bound_is_stationary() {
        let mesh = Mesh::new(4).unwrap();
        let coeffs = CoefficientSet::laplace(&mesh);
        let prob = ProblemData::new(
            mesh.clone(),
            coeffs,
            mesh.zeros(),
            mesh.constant(10.0),
            0.0,
            1.0,
        )
        .unwrap();
        let r = stationarity_residual(&prob, &mesh.zeros(), &Perturbation::none()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn random_controls_are_reproducible() {
        let mesh = Mesh::new(4).unwrap();
        let coeffs = CoefficientSet::laplace(&mesh);
        let prob =
            ProblemData::new(mesh.clone(), coeffs, mesh.zeros(), mesh.zeros(), -1.0, 2.0).unwrap();
        let a = random_control(&prob, 7, 1);
        assert_eq!(a, random_control(&prob, 7, 1));
        assert_ne!(a, random_control(&prob, 7, 2));
        assert!(is_admissible(&mesh, &a, -1.0, 2.0));
    }
}
