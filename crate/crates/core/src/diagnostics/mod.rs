//! Second-order and structural diagnostics at a stationary control.
//!
//! Everything here is sampling based. Reported constants are empirical
//! bounds over the drawn samples, not certificates.

mod constants;
mod linearization;

pub use constants::{
    adjoint_bound, garding_constant, linear_source_ratio, state_bound, GardingReport,
};
pub use linearization::{
    linearization_sample, verify_linearization_estimates, LinearizationReport, LinearizationSample,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::{evaluate_objective, ControlPoint, Perturbation, ProblemData};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField, NormKind};
use crate::optimizer::project_admissible;

/// Label attached to every sampled lower bound.
pub const NON_CERTIFICATE: &str = "non-certificate";

const SIGN_TOL: f64 = 1e-12;

/// Data of the cones `C`, `D^tau`, `G^tau` and `C^tau` at a stationary control.
///
/// `sigma` is the nodal gradient density. Built by [`ConeSpec::at`], it is
/// the lumped-metric gradient, whose nodal signs carry the discrete
/// variational inequality.
#[derive(Clone, Debug)]
pub struct ConeSpec {
    pub tau: f64,
    pub active_lower: Vec<usize>,
    pub active_upper: Vec<usize>,
    pub sigma: NodalField,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConeMembership {
    pub in_c: bool,
    pub in_dtau: bool,
    pub in_gtau: bool,
    pub in_ctau: bool,
}

impl ConeMembership {
    pub fn is_none(&self) -> bool {
        !(self.in_c || self.in_dtau || self.in_gtau || self.in_ctau)
    }
}

impl ConeSpec {
    pub fn new(
        tau: f64,
        active_lower: Vec<usize>,
        active_upper: Vec<usize>,
        sigma: NodalField,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        if active_lower.iter().any(|k| active_upper.contains(k)) {
            return Err(Error::InvalidInput("active sets overlap".into()));
        }
        Ok(Self {
            tau,
            active_lower,
            active_upper,
            sigma,
        })
    }

    /// Cone data at `u_bar` with active sets read off exactly.
    pub fn at(prob: &ProblemData, point: &ControlPoint<'_>, tau: f64) -> Result<Self> {
        let (ua, ub) = prob.bounds();
        let u = point.control();
        let lower = (0..u.len()).filter(|&k| u.values[k] == ua).collect();
        let upper = (0..u.len()).filter(|&k| u.values[k] == ub).collect();
        Self::new(tau, lower, upper, point.pack.lumped_gradient(prob.mesh()))
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(
            tau,
            self.active_lower.clone(),
            self.active_upper.clone(),
            self.sigma.clone(),
        )
    }
}

/// Cone membership of `v`, given `z_v` and `J'(u_bar) v`.
pub fn classify_direction(
    mesh: &Mesh,
    cone: &ConeSpec,
    v: &NodalField,
    z_v: &NodalField,
    jprime_v: f64,
) -> ConeMembership {
    let signs_ok = cone.active_lower.iter().all(|&k| v.values[k] >= -SIGN_TOL)
        && cone.active_upper.iter().all(|&k| v.values[k] <= SIGN_TOL);
    if !signs_ok {
        return ConeMembership::default();
    }
    let scale = 1.0 + cone.sigma.values.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let sigma_tol = SIGN_TOL * scale;
    let vanishes_where = |threshold: f64| {
        cone.sigma
            .values
            .iter()
            .zip(&v.values)
            .all(|(s, x)| s.abs() <= threshold || x.abs() <= SIGN_TOL)
    };
    let lumped_abs: f64 = mesh
        .lumped_mass()
        .iter()
        .zip(&v.values)
        .map(|(m, x)| m * x.abs())
        .sum();
    let in_c = vanishes_where(sigma_tol);
    let in_dtau = vanishes_where(cone.tau.max(sigma_tol));
    let in_gtau = jprime_v
        <= cone.tau * mesh.norm(z_v, NormKind::L1) + sigma_tol * lumped_abs + SIGN_TOL;
    ConeMembership {
        in_c,
        in_dtau,
        in_gtau,
        in_ctau: in_dtau && in_gtau,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuotientMode {
    /// Denominator `||z||_{L2}^2`.
    State,
    /// Denominator `||z||_{L2} ||u - u_bar||_{L1}`.
    Control,
}

#[derive(Clone, Debug)]
pub struct QuotientReport {
    pub samples: usize,
    pub skipped: usize,
    pub min_quotient: f64,
    pub quantile_05: f64,
    pub violating_sample: Option<NodalField>,
    pub alpha_used: f64,
    pub label: &'static str,
}

/// The `k`-th of `n` random admissible controls around `u_bar`:
/// `P(u_bar + s_k w)` with `w` uniform in `[-1, 1]` and `s_k`
/// log-spaced in `[1e-3, 1]`.
pub fn sample_control(
    prob: &ProblemData,
    u_bar: &NodalField,
    k: usize,
    n: usize,
    seed: u64,
) -> NodalField {
    let s = if n <= 1 {
        1.0
    } else {
        10f64.powf(-3.0 + 3.0 * k as f64 / (n - 1) as f64)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let w = u_bar.map(|_| rng.random_range(-1.0..=1.0));
    let (ua, ub) = prob.bounds();
    project_admissible(&u_bar.axpy(s, &w), ua, ub)
}

/// Samples `[J'(u_bar) d + J''(u_bar) d^2] / denominator` with `d = u - u_bar`
/// over random admissible `u` with `||y_u - y_bar||_inf < alpha`.
pub fn coercivity_quotient_sweep(
    prob: &ProblemData,
    pert: &Perturbation,
    u_bar: &NodalField,
    mode: QuotientMode,
    alpha: f64,
    n_samples: usize,
    seed: u64,
) -> Result<QuotientReport> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    let mesh = prob.mesh();
    let point = ControlPoint::new(prob, u_bar, pert)?;
    let y_bar = &point.pack.y;

    let quotients: Vec<Option<(f64, NodalField)>> = (0..n_samples)
        .into_par_iter()
        .map(|k| -> Result<Option<(f64, NodalField)>> {
            let u = sample_control(prob, u_bar, k, n_samples, seed);
            let d = u.sub(u_bar);
            if d.values.iter().all(|&x| x == 0.0) {
                return Ok(None);
            }
            let (_, y, _) = evaluate_objective(prob, &u, pert, Some(y_bar))?;
            if mesh.norm(&y.sub(y_bar), NormKind::Linf) >= alpha {
                return Ok(None);
            }
            let z = point.z(&d)?;
            let z_l2 = mesh.norm(&z, NormKind::L2);
            let denom = match mode {
                QuotientMode::State => z_l2 * z_l2,
                QuotientMode::Control => z_l2 * mesh.norm(&d, NormKind::L1),
            };
            if !(denom > 0.0) {
                return Ok(None);
            }
            let num = point.derivative(&d) + point.hessian_from_z(&z, &z, &d, &d);
            Ok(Some((num / denom, u)))
        })
        .collect::<Result<_>>()?;

    let mut kept: Vec<(f64, NodalField)> = quotients.into_iter().flatten().collect();
    let skipped = n_samples - kept.len();
    if kept.is_empty() {
        return Err(Error::NoUsableSamples(format!(
            "all {n_samples} samples skipped (zero denominator or outside the alpha = {alpha:e} ball)"
        )));
    }
    let mut values: Vec<f64> = kept.iter().map(|(q, _)| *q).collect();
    values.sort_by(f64::total_cmp);
    let min_quotient = values[0];
    let quantile_05 = quantile(&values, 0.05);
    let violating_sample = if min_quotient < 0.0 {
        let idx = kept
            .iter()
            .position(|(q, _)| *q == min_quotient)
            .expect("minimum is attained");
        Some(kept.swap_remove(idx).1)
    } else {
        None
    };
    Ok(QuotientReport {
        samples: values.len(),
        skipped,
        min_quotient,
        quantile_05,
        violating_sample,
        alpha_used: alpha,
        label: NON_CERTIFICATE,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureSample {
    pub eps: f64,
    pub measure: f64,
    pub ratio: f64,
}

/// `|{|sigma| <= eps}|` and its ratio to `eps` on each grid value.
pub fn measure_condition_probe(
    mesh: &Mesh,
    sigma: &NodalField,
    eps_grid: &[f64],
) -> Result<Vec<MeasureSample>> {
    mesh.check(sigma)?;
    if eps_grid.iter().any(|&e| !(e > 0.0)) || eps_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "eps grid must be positive and strictly increasing".into(),
        ));
    }
    Ok(eps_grid
        .iter()
        .map(|&eps| {
            let measure = mesh.sublevel_band_measure(sigma, eps);
            MeasureSample {
                eps,
                measure,
                ratio: measure / eps,
            }
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct GrowthReport {
    pub samples: usize,
    pub skipped: usize,
    pub min_kappa: f64,
    pub fraction_positive: f64,
    /// `(kappa, holds)`: whether `J(u_bar) + kappa/2 ||y_u - y_bar||^2 <= J(u)`
    /// held on every sample.
    pub candidates: Vec<(f64, bool)>,
    pub eps_ball: f64,
    pub label: &'static str,
}

/// Samples `kappa = 2 (J(u) - J(u_bar)) / ||y_u - y_bar||_{L2}^2` over random
/// admissible `u` with `||y_u - y_bar||_inf < eps_ball`.
pub fn quadratic_growth_probe(
    prob: &ProblemData,
    pert: &Perturbation,
    u_bar: &NodalField,
    kappa_candidates: &[f64],
    eps_ball: f64,
    n_samples: usize,
    seed: u64,
) -> Result<GrowthReport> {
    let mesh = prob.mesh();
    let (j_bar, y_bar, _) = evaluate_objective(prob, u_bar, pert, None)?;
    let kappas: Vec<Option<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|k| -> Result<Option<f64>> {
            let u = sample_control(prob, u_bar, k, n_samples, seed);
            if u == *u_bar {
                return Ok(None);
            }
            let (j, y, _) = evaluate_objective(prob, &u, pert, Some(&y_bar))?;
            let dy = y.sub(&y_bar);
            if mesh.norm(&dy, NormKind::Linf) >= eps_ball {
                return Ok(None);
            }
            let d2 = mesh.inner(&dy, &dy);
            if !(d2 > 0.0) {
                return Ok(None);
            }
            Ok(Some(2.0 * (j - j_bar) / d2))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = kappas.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::NoUsableSamples(format!(
            "all {n_samples} samples skipped (u = u_bar or outside the eps = {eps_ball:e} ball)"
        )));
    }
    let min_kappa = kept.iter().copied().fold(f64::INFINITY, f64::min);
    let positive = kept.iter().filter(|&&k| k > 0.0).count();
    Ok(GrowthReport {
        samples: kept.len(),
        skipped: n_samples - kept.len(),
        min_kappa,
        fraction_positive: positive as f64 / kept.len() as f64,
        candidates: kappa_candidates
            .iter()
            .map(|&c| (c, kept.iter().all(|&k| k >= c)))
            .collect(),
        eps_ball,
        label: NON_CERTIFICATE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 0.0);
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert!((quantile(&v, 0.05) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn strip_measure_ratio() {
        let mesh = Mesh::new(16).unwrap();
        let sigma = mesh.interpolate(|x, _| x - 0.5).unwrap();
        let grid = [1e-3, 1e-2, 0.1, 0.25];
        for s in measure_condition_probe(&mesh, &sigma, &grid).unwrap() {
            assert!((s.ratio - 2.0).abs() < 1e-10, "{s:?}");
        }
        assert!(measure_condition_probe(&mesh, &sigma, &[0.1, 0.01]).is_err());
    }

    #[test]
    fn zero_direction_is_in_every_cone() {
        let mesh = Mesh::new(4).unwrap();
        let sigma = mesh.interpolate(|x, y| x - y).unwrap();
        let cone = ConeSpec::new(0.1, vec![0], vec![24], sigma).unwrap();
        let m = classify_direction(&mesh, &cone, &mesh.zeros(), &mesh.zeros(), 0.0);
        assert!(m.in_c && m.in_dtau && m.in_gtau && m.in_ctau);
    }

    #[test]
    fn sign_violation_is_in_no_cone() {
        let mesh = Mesh::new(4).unwrap();
        let cone = ConeSpec::new(0.1, vec![], vec![12], mesh.zeros()).unwrap();
        let mut v = mesh.zeros();
        v.values[12] = 1.0;
        assert!(classify_direction(&mesh, &cone, &v, &mesh.zeros(), 0.0).is_none());
    }

    #[test]
    fn overlapping_active_sets_rejected() {
        let mesh = Mesh::new(4).unwrap();
        assert!(ConeSpec::new(0.1, vec![3], vec![3], mesh.zeros()).is_err());
    }
}
