//! Perturbation families, stability sweeps and log-log slope fits.

use std::fmt;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;

use crate::control::{Perturbation, ProblemData};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField, NormKind};
use crate::optimizer::{optimize, InitialGuess, OptimizeResult, OptimizerConfig};
use crate::pde::{self, Linearization};

/// `eps -> (xi_eps, eta_eps, g_eps, Tikhonov eps)`.
///
/// `xi_eps = eps xi_shape`, `eta_eps = eps eta_shape` and
/// `g_eps = g + eps g_shape` for the enabled components. The shapes are
/// normalized at construction: `xi` and `eta` to unit L2 norm, `g` to unit
/// maximum norm.
#[derive(Clone, Debug)]
pub struct PerturbationFamily {
    pub xi_shape: NodalField,
    pub eta_shape: NodalField,
    pub g_shape: NodalField,
    pub scale_xi: bool,
    pub scale_eta: bool,
    pub scale_g: bool,
    pub tikhonov: bool,
    pub eps_grid: Vec<f64>,
}

impl PerturbationFamily {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &Mesh,
        xi_shape: NodalField,
        eta_shape: NodalField,
        g_shape: NodalField,
        scale_xi: bool,
        scale_eta: bool,
        scale_g: bool,
        tikhonov: bool,
        eps_grid: Vec<f64>,
    ) -> Result<Self> {
        for f in [&xi_shape, &eta_shape, &g_shape] {
            mesh.check(f)?;
        }
        if eps_grid.is_empty()
            || eps_grid.iter().any(|&e| !(e > 0.0 && e.is_finite()))
            || eps_grid.windows(2).any(|w| w[0] <= w[1])
        {
            return Err(Error::InvalidInput(
                "eps grid must be nonempty, positive and strictly decreasing".into(),
            ));
        }
        let normalize = |f: NodalField, kind: NormKind, name: &str, on: bool| -> Result<NodalField> {
            let n = mesh.norm(&f, kind);
            if n > 0.0 {
                Ok(f.scale(1.0 / n))
            } else if on {
                Err(Error::InvalidInput(format!("{name} shape is zero but enabled")))
            } else {
                Ok(f)
            }
        };
        Ok(Self {
            xi_shape: normalize(xi_shape, NormKind::L2, "xi", scale_xi)?,
            eta_shape: normalize(eta_shape, NormKind::L2, "eta", scale_eta)?,
            g_shape: normalize(g_shape, NormKind::Linf, "g", scale_g)?,
            scale_xi,
            scale_eta,
            scale_g,
            tikhonov,
            eps_grid,
        })
    }

    /// Geometric grid of 12 points from `1e-1` down to `1e-4`.
    pub fn default_grid() -> Vec<f64> {
        geometric_grid(1e-1, 1e-4, 12)
    }

    pub fn is_trivial(&self) -> bool {
        !(self.scale_xi || self.scale_eta || self.scale_g || self.tikhonov)
    }

    /// Perturbation data of `(P_eps)`.
    pub fn at(&self, prob: &ProblemData, eps: f64) -> Perturbation {
        Perturbation {
            xi: self.scale_xi.then(|| self.xi_shape.scale(eps)),
            eta: self.scale_eta.then(|| self.eta_shape.scale(eps)),
            g: self.scale_g.then(|| prob.g().axpy(eps, &self.g_shape)),
            tikhonov: if self.tikhonov { eps } else { 0.0 },
        }
    }

    /// `||xi_eps||_{L2} + ||eta_eps||_{L2} + ||g_eps - g||_inf + eps_tikhonov`.
    pub fn magnitude(&self, mesh: &Mesh, eps: f64) -> f64 {
        let mut m = 0.0;
        if self.scale_xi {
            m += eps * mesh.norm(&self.xi_shape, NormKind::L2);
        }
        if self.scale_eta {
            m += eps * mesh.norm(&self.eta_shape, NormKind::L2);
        }
        if self.scale_g {
            m += eps * mesh.norm(&self.g_shape, NormKind::Linf);
        }
        if self.tikhonov {
            m += eps;
        }
        m
    }
}

/// `n` points from `hi` down to `lo`, equally spaced in `log`.
pub fn geometric_grid(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let ratio = (lo / hi).ln() / (n - 1) as f64;
    (0..n).map(|k| hi * (ratio * k as f64).exp()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub eps: f64,
    pub magnitude: f64,
    pub u_eps: NodalField,
    pub y_eps: NodalField,
    pub dist_y_l2: f64,
    pub dist_u_l1: f64,
    pub j_eps: f64,
    pub optimizer_converged: bool,
}

/// Solves `(P_eps)` on every grid value, in grid order. A trivial family
/// reuses `reference` for every record.
///
/// With `warm_start` each solve starts from the previous solution, the
/// first from `reference`; the sweep is then sequential. Without it each
/// solve uses the random restarts of `cfg` and the grid runs in parallel.
pub fn run_stability_sweep(
    prob: &ProblemData,
    family: &PerturbationFamily,
    cfg: &OptimizerConfig,
    warm_start: bool,
    reference: &OptimizeResult,
) -> Result<Vec<SweepRecord>> {
    let mesh = prob.mesh();
    let record = |eps: f64, res: OptimizeResult| SweepRecord {
        eps,
        magnitude: family.magnitude(mesh, eps),
        dist_y_l2: mesh.norm(&res.pack.y.sub(&reference.pack.y), NormKind::L2),
        dist_u_l1: mesh.norm(&res.u_star.sub(&reference.u_star), NormKind::L1),
        j_eps: res.pack.j_value,
        optimizer_converged: res.converged,
        u_eps: res.u_star,
        y_eps: res.pack.y,
    };

    if family.is_trivial() {
        return Ok(family
            .eps_grid
            .iter()
            .map(|&eps| record(eps, reference.clone()))
            .collect());
    }
    if warm_start {
        let mut records = Vec::with_capacity(family.eps_grid.len());
        let mut start = reference.u_star.clone();
        for &eps in &family.eps_grid {
            let pert = family.at(prob, eps);
            let res = optimize(prob, &pert, cfg, &InitialGuess::Given(start.clone()))?;
            info!(
                "eps = {eps:.3e}: J = {:.10e}, residual {:.3e}, {} iterations",
                res.pack.j_value, res.stationarity_residual, res.iterations
            );
            if res.converged {
                start = res.u_star.clone();
            }
            records.push(record(eps, res));
        }
        Ok(records)
    } else {
        family
            .eps_grid
            .par_iter()
            .map(|&eps| {
                let pert = family.at(prob, eps);
                let res = optimize(prob, &pert, cfg, &InitialGuess::Random)?;
                Ok(record(eps, res))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlopeMetric {
    StateL2,
    ControlL1,
}

impl SlopeMetric {
    pub fn distance(&self, r: &SweepRecord) -> f64 {
        match self {
            SlopeMetric::StateL2 => r.dist_y_l2,
            SlopeMetric::ControlL1 => r.dist_u_l1,
        }
    }
}

impl fmt::Display for SlopeMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlopeMetric::StateL2 => "state_L2",
            SlopeMetric::ControlL1 => "control_L1",
        })
    }
}

impl FromStr for SlopeMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state_L2" => Ok(SlopeMetric::StateL2),
            "control_L1" => Ok(SlopeMetric::ControlL1),
            other => Err(Error::InvalidInput(format!("unknown slope metric `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Smallest and largest `eps` among the fitted points.
    pub eps_range_used: (f64, f64),
    pub n_points: usize,
    pub floor: f64,
    /// Largest grid `eps` up to which the slope fitted on all points with
    /// smaller `eps` stays within 0.1 of the slope on the four smallest.
    pub eps_stable: Option<f64>,
}

/// Default distance floor `10 h^2`.
pub fn default_floor(mesh: &Mesh) -> f64 {
    10.0 * mesh.h() * mesh.h()
}

/// Least-squares fit of `log(distance)` against `log(magnitude)` over the
/// converged records whose distance exceeds `floor`.
pub fn fit_lipschitz_slope(
    records: &[SweepRecord],
    metric: SlopeMetric,
    floor: f64,
) -> Result<SlopeFit> {
    let mut points: Vec<(f64, f64, f64)> = records
        .iter()
        .filter(|r| r.optimizer_converged && r.magnitude > 0.0)
        .map(|r| (r.eps, r.magnitude, metric.distance(r)))
        .filter(|&(_, _, d)| d > floor && d.is_finite())
        .collect();
    if points.len() < 4 {
        return Err(Error::TooFewPoints {
            floor,
            found: points.len(),
        });
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.1.ln(), p.2.ln())).collect();
    let (slope, intercept, r_squared) = least_squares(&xy);

    let base = least_squares(&xy[..4]).0;
    let eps_stable = (4..=xy.len())
        .take_while(|&k| (least_squares(&xy[..k]).0 - base).abs() <= 0.1)
        .last()
        .map(|k| points[k - 1].0);

    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        eps_range_used: (points[0].0, points[points.len() - 1].0),
        n_points: points.len(),
        floor,
        eps_stable,
    })
}

fn least_squares(xy: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xy
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsSample {
    /// `||y^eps_u - y_u||_{H10} + ||y^eps_u - y_u||_inf`.
    pub state_lhs: f64,
    /// `||z^eps_{u,v} - z_{u,v}||_{L2}`.
    pub derivative_lhs: f64,
    /// `state_lhs / ||xi_eps||_{L2}`; `None` when `xi_eps = 0`.
    pub state_ratio: Option<f64>,
    /// `derivative_lhs / (||xi_eps||_{L2} ||z_{u,v}||_{L2})`.
    pub derivative_ratio: Option<f64>,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport {
    pub eps: f64,
    pub samples: Vec<BoundsSample>,
    pub worst_state_ratio: Option<f64>,
    pub worst_derivative_ratio: Option<f64>,
    pub failures: usize,
}

/// Both sides of the state and linearization perturbation bounds for the
/// source perturbation `xi_eps`, at each sample control, with `v` the fixed
/// direction of the linearization bound.
pub fn perturbation_bounds_check(
    prob: &ProblemData,
    family: &PerturbationFamily,
    u_samples: &[NodalField],
    eps: f64,
    v: &NodalField,
) -> Result<BoundsReport> {
    let mesh = prob.mesh();
    mesh.check(v)?;
    let pert = family.at(prob, eps);
    let xi_norm = pert
        .xi
        .as_ref()
        .map(|xi| mesh.norm(xi, NormKind::L2))
        .unwrap_or(0.0);
    let samples: Vec<BoundsSample> = u_samples
        .par_iter()
        .map(|u| {
            let eval = || -> Result<(f64, f64, f64)> {
                let (y, _) = pde::solve_state(mesh, prob.coeffs(), u, None, &prob.newton)?;
                let y_eps = match &pert.xi {
                    Some(xi) => {
                        pde::solve_state_from(
                            mesh,
                            prob.coeffs(),
                            u,
                            Some(xi),
                            Some(&y),
                            &prob.newton,
                        )?
                        .0
                    }
                    None => y.clone(),
                };
                let dy = y_eps.sub(&y);
                let state = mesh.norm(&dy, NormKind::H10) + mesh.norm(&dy, NormKind::Linf);
                let z = Linearization::new(mesh, prob.coeffs(), &y)?.solve(v)?;
                let z_eps = Linearization::new(mesh, prob.coeffs(), &y_eps)?.solve(v)?;
                let deriv = mesh.norm(&z_eps.sub(&z), NormKind::L2);
                Ok((state, deriv, mesh.norm(&z, NormKind::L2)))
            };
            match eval() {
                Ok((state, deriv, z_norm)) => BoundsSample {
                    state_lhs: state,
                    derivative_lhs: deriv,
                    state_ratio: (xi_norm > 0.0).then(|| state / xi_norm),
                    derivative_ratio: (xi_norm > 0.0 && z_norm > 0.0)
                        .then(|| deriv / (xi_norm * z_norm)),
                    failed: false,
                },
                Err(_) => BoundsSample {
                    state_lhs: f64::NAN,
                    derivative_lhs: f64::NAN,
                    state_ratio: None,
                    derivative_ratio: None,
                    failed: true,
                },
            }
        })
        .collect();
    let worst = |f: fn(&BoundsSample) -> Option<f64>| {
        samples.iter().filter_map(f).reduce(f64::max)
    };
    Ok(BoundsReport {
        eps,
        worst_state_ratio: worst(|s| s.state_ratio),
        worst_derivative_ratio: worst(|s| s.derivative_ratio),
        failures: samples.iter().filter(|s| s.failed).count(),
        samples,
    })
}
