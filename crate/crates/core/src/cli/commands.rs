use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::output::{num, write_csv};
use super::plot::{loglog_svg, Series};
use super::Outcome;
use crate::control::{evaluate_J, ControlPoint, Perturbation};
use crate::diagnostics::{
    adjoint_bound, coercivity_quotient_sweep, garding_constant, linear_source_ratio,
    measure_condition_probe, quadratic_growth_probe, state_bound,
    verify_linearization_estimates, QuotientMode,
};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField, NormKind};
use crate::optimizer::{solve_control_problem, InitialGuess, OptimizeResult};
use crate::pde::{self, NewtonReport};
use crate::stability::{default_floor, fit_lipschitz_slope, run_stability_sweep, SlopeMetric};

fn node_rows(mesh: &Mesh, fields: &[&NodalField]) -> Vec<Vec<String>> {
    mesh.nodes()
        .iter()
        .enumerate()
        .map(|(k, &[x1, x2])| {
            let mut row = vec![num(x1), num(x2)];
            row.extend(fields.iter().map(|f| num(f.values[k])));
            row
        })
        .collect()
}

fn file(out: &Path, name: &str, files: &mut Vec<PathBuf>) -> PathBuf {
    let p = out.join(name);
    files.push(p.clone());
    p
}

pub(super) fn solve_state(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let prob = cfg.problem()?;
    let mesh = prob.mesh();
    let u = cfg.state.u.on_mesh(mesh)?;
    let (y, report) = pde::solve_state(mesh, prob.coeffs(), &u, None, &prob.newton)?;
    let mut files = Vec::new();
    write_csv(
        &file(out, "state.csv", &mut files),
        &["node_x1", "node_x2", "y"],
        &node_rows(mesh, &[&y]),
    )?;
    write_csv(
        &file(out, "report.csv", &mut files),
        &["newton_iters", "residual"],
        &[vec![report.iterations.to_string(), num(report.final_residual)]],
    )?;
    Ok(Outcome {
        files,
        summary: vec![format!(
            "Newton: {} iterations, residual {:.3e}, max y {:.6e}",
            report.iterations,
            report.final_residual,
            y.max()
        )],
    })
}

fn reference(cfg: &ExperimentConfig, prob: &crate::ProblemData) -> Result<OptimizeResult> {
    solve_control_problem(
        prob,
        &Perturbation::none(),
        &cfg.optimizer_config(),
        &InitialGuess::Random,
    )
}

pub(super) fn solve_control(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let prob = cfg.problem()?;
    let mesh = prob.mesh();
    let res = reference(cfg, &prob)?;
    let mut files = Vec::new();
    write_csv(
        &file(out, "control.csv", &mut files),
        &["node_x1", "node_x2", "u", "y", "phi"],
        &node_rows(mesh, &[&res.u_star, &res.pack.y, &res.pack.phi]),
    )?;
    write_csv(
        &file(out, "report.csv", &mut files),
        &["J", "stationarity_residual", "iterations", "converged", "restarts"],
        &[vec![
            num(res.pack.j_value),
            num(res.stationarity_residual),
            res.iterations.to_string(),
            res.converged.to_string(),
            res.restarts.len().to_string(),
        ]],
    )?;
    let history: Vec<Vec<String>> = res
        .j_history
        .iter()
        .enumerate()
        .map(|(k, j)| vec![k.to_string(), num(*j)])
        .collect();
    write_csv(&file(out, "history.csv", &mut files), &["iteration", "J"], &history)?;
    Ok(Outcome {
        files,
        summary: vec![format!(
            "J = {:.12e}, stationarity residual {:.3e} after {} iterations",
            res.pack.j_value, res.stationarity_residual, res.iterations
        )],
    })
}

/// Random combination of low Fourier modes with values in `[-1, 1]`.
fn smooth_field(mesh: &Mesh, rng: &mut ChaCha8Rng) -> Result<NodalField> {
    let modes: Vec<[f64; 4]> = (0..9)
        .map(|m| {
            [
                (m / 3 + 1) as f64,
                (m % 3 + 1) as f64,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(-1.0..=1.0) / 9.0,
            ]
        })
        .collect();
    mesh.interpolate(|x, y| {
        modes
            .iter()
            .map(|&[p, q, phase, c]| c * (p * PI * x + phase).cos() * (q * PI * y).cos())
            .sum()
    })
}

pub(super) fn verify_derivatives(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let prob = cfg.problem()?;
    let mesh = prob.mesh();
    let (ua, ub) = prob.bounds();
    let width = ub - ua;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    // Smooth fields: nodal noise is averaged out by the solution operator and
    // leaves differences at roundoff level. With u in the middle half of the
    // box and |t v| <= width/4 for the largest step, every u +- t v is
    // admissible.
    let t_max = cfg.diagnostics.fd_steps.iter().copied().fold(0.0, f64::max);
    let u = smooth_field(mesh, &mut rng)?.map(|w| ua + width * (0.5 + 0.25 * w));
    let v = smooth_field(mesh, &mut rng)?.scale(0.25 * width / t_max);
    let none = Perturbation::none();
    let point = ControlPoint::new(&prob, &u, &none)?;
    let adjoint = point.derivative(&v);
    let hessian = point.hessian_form(&v, &v)?;

    let mut grad_rows = Vec::new();
    let mut hess_rows = Vec::new();
    for &t in &cfg.diagnostics.fd_steps {
        let up = u.axpy(t, &v);
        let um = u.axpy(-t, &v);
        let fd = (evaluate_J(&prob, &up, &none)? - evaluate_J(&prob, &um, &none)?) / (2.0 * t);
        grad_rows.push(vec![num(t), num(fd), num(adjoint), num((fd - adjoint).abs())]);
        let dp = ControlPoint::new(&prob, &up, &none)?.derivative(&v);
        let dm = ControlPoint::new(&prob, &um, &none)?.derivative(&v);
        let fd2 = (dp - dm) / (2.0 * t);
        hess_rows.push(vec![num(t), num(fd2), num(hessian), num((fd2 - hessian).abs())]);
    }
    let mut files = Vec::new();
    write_csv(
        &file(out, "gradient_check.csv", &mut files),
        &["t", "fd_value", "adjoint_value", "abs_error"],
        &grad_rows,
    )?;
    write_csv(
        &file(out, "hessian_check.csv", &mut files),
        &["t", "fd_value", "hessian_value", "abs_error"],
        &hess_rows,
    )?;
    Ok(Outcome {
        files,
        summary: vec![format!("J'(u)v = {adjoint:.12e}, J''(u)v^2 = {hessian:.12e}")],
    })
}

pub(super) fn check_assumptions(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let prob = cfg.problem()?;
    let mesh = prob.mesh();
    let coeffs = prob.coeffs();
    let d = &cfg.diagnostics;
    let seed = cfg.rng_seed;
    let none = Perturbation::none();
    let res = reference(cfg, &prob)?;
    let u_bar = &res.u_star;

    let mut rows: Vec<(String, f64, String)> = Vec::new();
    let mut push = |name: &str, value: f64, note: &str| {
        rows.push((name.to_string(), value, note.to_string()));
    };
    push("lambda_a", coeffs.lambda_a(), "");
    push("mesh_peclet", coeffs.mesh_peclet(mesh), "");
    let garding = garding_constant(mesh, coeffs, d.n_samples, seed)?;
    push("garding_constant", garding.constant, "");
    push("garding_min_ratio", garding.min_ratio, "");
    push("linear_source_ratio", linear_source_ratio(mesh, coeffs, d.n_samples, seed)?, "");
    let k_u = state_bound(&prob, d.n_samples, seed)?;
    push("state_bound", k_u, "");
    push("adjoint_bound", adjoint_bound(&prob, d.n_samples, seed)?, "");
    push("J", res.pack.j_value, "");
    push("stationarity_residual", res.stationarity_residual, "");
    let (ua, ub) = prob.bounds();
    let on_bounds = u_bar.values.iter().filter(|&&v| v == ua || v == ub).count();
    push("bang_bang_fraction", on_bounds as f64 / u_bar.len() as f64, "");
    let alpha = d.alpha.unwrap_or(0.5 * k_u);
    push("alpha", alpha, "");
    for (mode, name) in [(QuotientMode::State, "state"), (QuotientMode::Control, "control")] {
        let q = coercivity_quotient_sweep(&prob, &none, u_bar, mode, alpha, d.n_samples, seed)?;
        push(&format!("{name}_quotient_min"), q.min_quotient, q.label);
        push(&format!("{name}_quotient_q05"), q.quantile_05, q.label);
    }
    let lin = verify_linearization_estimates(&prob, &none, u_bar, d.n_samples, seed)?;
    push("k_inf", lin.k_inf, "");
    push("m_2", lin.m_2, "");
    push("c_inf", lin.c_inf, "");
    push("c_l2", lin.c_l2, "");
    push("segment_constant", lin.segment_constant, "");
    push("adjoint_lipschitz", lin.adjoint_lipschitz, "");
    push("eps_calibrated", lin.eps_calibrated, "");
    push(
        "sandwich_holds",
        if lin.sandwich_holds { 1.0 } else { 0.0 },
        &format!("{} calibrated samples", lin.sandwich_samples),
    );
    let growth = quadratic_growth_probe(
        &prob,
        &none,
        u_bar,
        &d.kappa_candidates,
        d.eps_ball,
        d.n_samples,
        seed,
    )?;
    push("growth_min_kappa", growth.min_kappa, growth.label);
    push("growth_fraction_positive", growth.fraction_positive, growth.label);

    let sigma = res.pack.lumped_gradient(mesh);
    let measure = measure_condition_probe(mesh, &sigma, &d.measure_eps)?;

    let mut files = Vec::new();
    let summary = rows
        .iter()
        .map(|(n, v, note)| format!("{n:<26} {v:>14.6e} {note}"))
        .collect();
    write_csv(
        &file(out, "assumptions.csv", &mut files),
        &["quantity", "value", "note"],
        &rows
            .into_iter()
            .map(|(n, v, note)| vec![n, num(v), note])
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        &file(out, "measure.csv", &mut files),
        &["eps", "measure", "ratio"],
        &measure
            .iter()
            .map(|m| vec![num(m.eps), num(m.measure), num(m.ratio)])
            .collect::<Vec<_>>(),
    )?;
    Ok(Outcome { files, summary })
}

pub(super) fn sweep_stability(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let prob = cfg.problem()?;
    let mesh = prob.mesh();
    let family = cfg.family(mesh)?;
    if family.is_trivial() {
        return Err(Error::config("perturbation.active", "no component is perturbed"));
    }
    let opt = cfg.optimizer_config();
    let res = reference(cfg, &prob)?;
    info!(
        "reference solution: J = {:.10e}, residual {:.3e}",
        res.pack.j_value, res.stationarity_residual
    );
    let records = run_stability_sweep(&prob, &family, &opt, cfg.perturbation.warm_start, &res)?;
    let floor = cfg.perturbation.floor.unwrap_or_else(|| default_floor(mesh));

    let mut files = Vec::new();
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                num(r.eps),
                num(r.magnitude),
                num(r.dist_y_l2),
                num(r.dist_u_l1),
                num(r.j_eps),
                r.optimizer_converged.to_string(),
            ]
        })
        .collect();
    write_csv(
        &file(out, "sweep.csv", &mut files),
        &["eps", "magnitude", "dist_y_L2", "dist_u_L1", "J_eps", "converged"],
        &rows,
    )?;

    let mut summary = Vec::new();
    let mut slope_rows = Vec::new();
    for metric in [SlopeMetric::StateL2, SlopeMetric::ControlL1] {
        match fit_lipschitz_slope(&records, metric, floor) {
            Ok(fit) => {
                summary.push(format!(
                    "{metric}: slope {:.4} (r^2 {:.4}, {} points, eps in [{:.3e}, {:.3e}])",
                    fit.slope, fit.r_squared, fit.n_points, fit.eps_range_used.0, fit.eps_range_used.1
                ));
                slope_rows.push(vec![
                    metric.to_string(),
                    num(fit.slope),
                    num(fit.r_squared),
                    fit.n_points.to_string(),
                ]);
            }
            Err(Error::TooFewPoints { floor, found }) => {
                warn!("{metric}: only {found} points above the floor {floor:e}; no slope");
                summary.push(format!("{metric}: no slope, {found} points above {floor:e}"));
                slope_rows.push(vec![
                    metric.to_string(),
                    num(f64::NAN),
                    num(f64::NAN),
                    found.to_string(),
                ]);
            }
            Err(e) => return Err(e),
        }
    }
    write_csv(
        &file(out, "slopes.csv", &mut files),
        &["metric", "slope", "r2", "n_points"],
        &slope_rows,
    )?;
    let series = vec![
        Series {
            label: "dist_y_L2".into(),
            points: records.iter().map(|r| (r.magnitude, r.dist_y_l2)).collect(),
        },
        Series {
            label: "dist_u_L1".into(),
            points: records.iter().map(|r| (r.magnitude, r.dist_u_l1)).collect(),
        },
    ];
    std::fs::write(
        file(out, "sweep.svg", &mut files),
        loglog_svg("Stability sweep", "perturbation magnitude", "distance", &series),
    )?;
    Ok(Outcome { files, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    /// Errors against the nodal interpolant of the exact state.
    pub l2_error: f64,
    pub h10_error: f64,
    pub newton: NewtonReport,
}

/// Solves for the source that makes `sin(pi x1) sin(pi x2)` the exact state
/// on each level. Needs a constant diffusion tensor.
pub fn convergence_study(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRow>> {
    let c = &cfg.coefficients;
    if !c.regions.is_empty() {
        return Err(Error::config(
            "coefficients.regions",
            "the manufactured source needs a constant diffusion tensor",
        ));
    }
    let a = c.a;
    let b = c.b;
    cfg.diagnostics
        .levels
        .iter()
        .map(|&n| {
            let mesh = Mesh::new(n)?;
            let coeffs = cfg.coefficient_set(&mesh)?;
            let (c0, c1, c3) = (c.c0.on_mesh(&mesh)?, c.c1.on_mesh(&mesh)?, c.c3.on_mesh(&mesh)?);
            let exact = mesh.interpolate(|x1, x2| (PI * x1).sin() * (PI * x2).sin())?;
            let source: Vec<f64> = mesh
                .nodes()
                .iter()
                .enumerate()
                .map(|(k, &[x1, x2])| {
                    let (s1, s2) = ((PI * x1).sin(), (PI * x2).sin());
                    let (k1, k2) = ((PI * x1).cos(), (PI * x2).cos());
                    let y = s1 * s2;
                    let laplace_part = -PI * PI * (a[0][0] + a[1][1]) * y
                        + PI * PI * (a[0][1] + a[1][0]) * k1 * k2;
                    let convection = PI * (b[0] * k1 * s2 + b[1] * s1 * k2);
                    -laplace_part
                        + convection
                        + c0.values[k]
                        + c1.values[k] * y
                        + c3.values[k] * y.powi(3)
                })
                .collect();
            let u = mesh.field(source)?;
            let (y, newton) = pde::solve_state(&mesh, &coeffs, &u, None, &cfg.newton)?;
            let err = y.sub(&exact);
            Ok(ConvergenceRow {
                n,
                h: mesh.h(),
                l2_error: mesh.norm(&err, NormKind::L2),
                h10_error: mesh.norm(&err, NormKind::H10),
                newton,
            })
        })
        .collect()
}

fn order(prev: Option<&ConvergenceRow>, row: &ConvergenceRow, e: fn(&ConvergenceRow) -> f64) -> f64 {
    prev.map_or(f64::NAN, |p| (e(p) / e(row)).ln() / (p.h / row.h).ln())
}

pub(super) fn convergence(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let rows = convergence_study(cfg)?;
    let mut files = Vec::new();
    let mut table = Vec::new();
    let mut summary = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| &rows[j]);
        let l2_order = order(prev, r, |r| r.l2_error);
        let h10_order = order(prev, r, |r| r.h10_error);
        summary.push(format!(
            "n = {:>4}: L2 error {:.4e} (order {l2_order:.3}), H1 error {:.4e} (order {h10_order:.3})",
            r.n, r.l2_error, r.h10_error
        ));
        table.push(vec![
            r.n.to_string(),
            num(r.h),
            num(r.l2_error),
            num(r.h10_error),
            num(l2_order),
            num(h10_order),
            r.newton.iterations.to_string(),
        ]);
    }
    write_csv(
        &file(out, "convergence.csv", &mut files),
        &["n", "h", "l2_error", "h10_error", "l2_order", "h10_order", "newton_iters"],
        &table,
    )?;
    let series = vec![
        Series {
            label: "L2 error".into(),
            points: rows.iter().map(|r| (r.h, r.l2_error)).collect(),
        },
        Series {
            label: "H1 error".into(),
            points: rows.iter().map(|r| (r.h, r.h10_error)).collect(),
        },
    ];
    std::fs::write(
        file(out, "convergence.svg", &mut files),
        loglog_svg("Mesh convergence", "h", "error", &series),
    )?;
    Ok(Outcome { files, summary })
}
