use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sample_control;
use crate::control::{ControlPoint, Perturbation, ProblemData};
use crate::error::Result;
use crate::mesh::{NodalField, NormKind};

const THETAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Norms entering the linearization estimates for one control `u` and one
/// direction `v`. `dy = y_u - y_bar`, `z = z_{u_bar, u - u_bar}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearizationSample {
    pub dist_inf: f64,
    pub dist_l2: f64,
    pub dist_l4: f64,
    /// `||dy - z||`.
    pub remainder_inf: f64,
    pub remainder_l2: f64,
    pub z_inf: f64,
    pub z_l2: f64,
    /// `||z_{u_bar,v}||`.
    pub zv_bar_inf: f64,
    pub zv_bar_l2: f64,
    /// `||z_{u,v}||`.
    pub zv_inf: f64,
    pub zv_l2: f64,
    /// `||z_{u,v} - z_{u_bar,v}||`.
    pub zv_diff_inf: f64,
    pub zv_diff_l2: f64,
}

impl LinearizationSample {
    /// `||dy - z||_inf / ||dy||_{L4}^2`.
    pub fn remainder_ratio_inf(&self) -> f64 {
        self.remainder_inf / (self.dist_l4 * self.dist_l4)
    }

    /// `||dy - z||_{L2} / ||dy||_{L2}^2`.
    pub fn remainder_ratio_l2(&self) -> f64 {
        self.remainder_l2 / (self.dist_l2 * self.dist_l2)
    }

    pub fn derivative_ratio_inf(&self) -> f64 {
        self.zv_diff_inf / (self.dist_inf * self.zv_bar_inf)
    }

    pub fn derivative_ratio_l2(&self) -> f64 {
        self.zv_diff_l2 / (self.dist_l2 * self.zv_bar_l2)
    }

    /// `||z|| / ||dy||` in `(Linf, L2)`.
    pub fn state_sandwich(&self) -> (f64, f64) {
        (self.z_inf / self.dist_inf, self.z_l2 / self.dist_l2)
    }

    /// `||z_{u,v}|| / ||z_{u_bar,v}||` in `(Linf, L2)`.
    pub fn direction_sandwich(&self) -> (f64, f64) {
        (self.zv_inf / self.zv_bar_inf, self.zv_l2 / self.zv_bar_l2)
    }

    /// Both sandwich estimates with factors 1/2 and 3/2 in both norms.
    pub fn sandwich_holds(&self) -> bool {
        let (a, b) = self.state_sandwich();
        let (c, d) = self.direction_sandwich();
        [a, b, c, d].iter().all(|r| (0.5..=1.5).contains(r))
    }
}

/// Evaluates all norms of [`LinearizationSample`] for the control `u` and
/// direction `v`.
pub fn linearization_sample(
    prob: &ProblemData,
    pert: &Perturbation,
    bar: &ControlPoint<'_>,
    u: &NodalField,
    v: &NodalField,
) -> Result<LinearizationSample> {
    let mesh = prob.mesh();
    let at_u = ControlPoint::with_guess(prob, u, pert, Some(&bar.pack.y))?;
    let dy = at_u.pack.y.sub(&bar.pack.y);
    let z = bar.z(&u.sub(bar.control()))?;
    let rem = dy.sub(&z);
    let zv_bar = bar.z(v)?;
    let zv = at_u.z(v)?;
    let zv_diff = zv.sub(&zv_bar);
    let inf = |f: &NodalField| mesh.norm(f, NormKind::Linf);
    let l2 = |f: &NodalField| mesh.norm(f, NormKind::L2);
    Ok(LinearizationSample {
        dist_inf: inf(&dy),
        dist_l2: l2(&dy),
        dist_l4: mesh.lp_norm_even(&dy, 4),
        remainder_inf: inf(&rem),
        remainder_l2: l2(&rem),
        z_inf: inf(&z),
        z_l2: l2(&z),
        zv_bar_inf: inf(&zv_bar),
        zv_bar_l2: l2(&zv_bar),
        zv_inf: inf(&zv),
        zv_l2: l2(&zv),
        zv_diff_inf: inf(&zv_diff),
        zv_diff_l2: l2(&zv_diff),
    })
}

#[derive(Clone, Debug)]
pub struct LinearizationReport {
    pub samples: usize,
    /// Worst `||dy - z||_inf / ||dy||_{L4}^2`.
    pub k_inf: f64,
    /// Worst `||dy - z||_{L2} / ||dy||_{L2}^2`.
    pub m_2: f64,
    /// Worst `||z_{u,v} - z_{u_bar,v}|| / (||dy|| ||z_{u_bar,v}||)`.
    pub c_inf: f64,
    pub c_l2: f64,
    /// Worst `(||y_theta - y_bar||_inf / ||dy||_inf - 1) / ||dy||_inf` over
    /// `theta` in `{0, 1/4, 1/2, 3/4, 1}`.
    pub segment_constant: f64,
    /// Worst `||phi_theta - phi_bar||_inf / ||dy||_inf`.
    pub adjoint_lipschitz: f64,
    /// `1 / (2 max(k_inf, m_2, c_inf, c_l2))`; below this state distance the
    /// measured constants force both sandwich estimates.
    pub eps_calibrated: f64,
    pub sandwich_samples: usize,
    pub sandwich_holds: bool,
    /// Extreme sandwich ratios over the calibrated samples, all four ratios
    /// pooled.
    pub sandwich_range: (f64, f64),
}

struct Evaluated {
    sample: LinearizationSample,
    segment: f64,
    adjoint: f64,
}

/// Measures the constants of the linearization estimates over random
/// admissible controls around `u_bar`.
pub fn verify_linearization_estimates(
    prob: &ProblemData,
    pert: &Perturbation,
    u_bar: &NodalField,
    n_samples: usize,
    seed: u64,
) -> Result<LinearizationReport> {
    let mesh = prob.mesh();
    let bar = ControlPoint::new(prob, u_bar, pert)?;
    let evaluated: Vec<Option<Evaluated>> = (0..n_samples)
        .into_par_iter()
        .map(|k| -> Result<Option<Evaluated>> {
            let u = sample_control(prob, u_bar, k, n_samples, seed);
            let d = u.sub(u_bar);
            if d.values.iter().all(|&x| x == 0.0) {
                return Ok(None);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            rng.set_stream(k as u64);
            let v = u.map(|_| rng.random_range(-1.0..=1.0));
            let sample = linearization_sample(prob, pert, &bar, &u, &v)?;
            if !(sample.dist_inf > 0.0) {
                return Ok(None);
            }
            let mut segment = 0.0f64;
            let mut adjoint = 0.0f64;
            for theta in THETAS {
                let ut = u_bar.axpy(theta, &d);
                let pt = ControlPoint::with_guess(prob, &ut, pert, Some(&bar.pack.y))?;
                let dt = mesh.norm(&pt.pack.y.sub(&bar.pack.y), NormKind::Linf);
                segment = segment.max((dt / sample.dist_inf - 1.0) / sample.dist_inf);
                let dphi = mesh.norm(&pt.pack.phi.sub(&bar.pack.phi), NormKind::Linf);
                adjoint = adjoint.max(dphi / sample.dist_inf);
            }
            Ok(Some(Evaluated {
                sample,
                segment,
                adjoint,
            }))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<Evaluated> = evaluated.into_iter().flatten().collect();

    let worst = |f: &dyn Fn(&Evaluated) -> f64| {
        kept.iter()
            .map(f)
            .filter(|x| x.is_finite())
            .fold(0.0f64, f64::max)
    };
    let k_inf = worst(&|e| e.sample.remainder_ratio_inf());
    let m_2 = worst(&|e| e.sample.remainder_ratio_l2());
    let c_inf = worst(&|e| e.sample.derivative_ratio_inf());
    let c_l2 = worst(&|e| e.sample.derivative_ratio_l2());
    let worst_constant = k_inf.max(m_2).max(c_inf).max(c_l2);
    let eps_calibrated = if worst_constant > 0.0 {
        0.5 / worst_constant
    } else {
        f64::INFINITY
    };

    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut sandwich_samples = 0;
    let mut sandwich_holds = true;
    for e in kept.iter().filter(|e| e.sample.dist_inf <= eps_calibrated) {
        sandwich_samples += 1;
        sandwich_holds &= e.sample.sandwich_holds();
        let (a, b) = e.sample.state_sandwich();
        let (c, d) = e.sample.direction_sandwich();
        for r in [a, b, c, d] {
            range = (range.0.min(r), range.1.max(r));
        }
    }

    Ok(LinearizationReport {
        samples: kept.len(),
        k_inf,
        m_2,
        c_inf,
        c_l2,
        segment_constant: worst(&|e| e.segment),
        adjoint_lipschitz: worst(&|e| e.adjoint),
        eps_calibrated,
        sandwich_samples,
        sandwich_holds,
        sandwich_range: range,
    })
}
