//! The control problem: objective, adjoint gradient, Hessian form and the
//! ψ field.
//!
//! The objective is
//! `J(u) = int 1/2 (y - y_d)^2 + eta y + g u + eps/2 u^2` with `y` the state
//! for the source `u + xi`. All integrals use the consistent P1 mass matrix,
//! so `J'(u) v = <sigma, v>_M` holds exactly on the discrete level with
//! `sigma = phi + g + eps u`.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField};
use crate::pde::{self, CoefficientSet, Linearization, NewtonConfig, NewtonReport};

/// Admissibility slack for controls passed to the objective.
pub const ADMISSIBLE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ProblemData {
    mesh: Mesh,
    coeffs: CoefficientSet,
    y_d: NodalField,
    g: NodalField,
    u_a: f64,
    u_b: f64,
    pub newton: NewtonConfig,
}

impl ProblemData {
    pub fn new(
        mesh: Mesh,
        coeffs: CoefficientSet,
        y_d: NodalField,
        g: NodalField,
        u_a: f64,
        u_b: f64,
    ) -> Result<Self> {
        if !(u_a < u_b) || !u_a.is_finite() || !u_b.is_finite() {
            return Err(Error::InvalidInput(format!(
                "control bounds need u_a < u_b, got [{u_a}, {u_b}]"
            )));
        }
        mesh.check(&y_d)?;
        mesh.check(&g)?;
        if !y_d.is_finite() || !g.is_finite() {
            return Err(Error::InvalidInput("y_d and g must be finite".into()));
        }
        Ok(Self {
            mesh,
            coeffs,
            y_d,
            g,
            u_a,
            u_b,
            newton: NewtonConfig::default(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn coeffs(&self) -> &CoefficientSet {
        &self.coeffs
    }

    pub fn y_d(&self) -> &NodalField {
        &self.y_d
    }

    pub fn g(&self) -> &NodalField {
        &self.g
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.u_a, self.u_b)
    }

    /// Rejects controls outside `[u_a, u_b]` by more than [`ADMISSIBLE_TOL`].
    pub fn check_admissible(&self, u: &NodalField) -> Result<()> {
        self.mesh.check(u)?;
        let tol = ADMISSIBLE_TOL * (1.0 + self.u_a.abs().max(self.u_b.abs()));
        if let Some(k) = u
            .values
            .iter()
            .position(|&v| !(v >= self.u_a - tol && v <= self.u_b + tol))
        {
            let [x1, x2] = self.mesh.nodes()[k];
            return Err(Error::InvalidInput(format!(
                "control value {} at ({x1}, {x2}) is outside [{}, {}]",
                u.values[k], self.u_a, self.u_b
            )));
        }
        Ok(())
    }
}

/// Perturbation of the state equation and the objective.
///
/// `xi` is added to the source, `eta` enters the objective as `eta y`, `g`
/// replaces the linear control weight and `tikhonov` adds `eps/2 u^2`.
#[derive(Clone, Debug, Default)]
pub struct Perturbation {
    pub xi: Option<NodalField>,
    pub eta: Option<NodalField>,
    pub g: Option<NodalField>,
    pub tikhonov: f64,
}

impl Perturbation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn tikhonov(eps: f64) -> Self {
        Self {
            tikhonov: eps,
            ..Self::default()
        }
    }

    fn validate(&self, mesh: &Mesh) -> Result<()> {
        for f in [&self.xi, &self.eta, &self.g].into_iter().flatten() {
            mesh.check(f)?;
        }
        if !(self.tikhonov >= 0.0 && self.tikhonov.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "Tikhonov weight must be nonnegative, got {}",
                self.tikhonov
            )));
        }
        Ok(())
    }

    fn g<'a>(&'a self, prob: &'a ProblemData) -> &'a NodalField {
        self.g.as_ref().unwrap_or(&prob.g)
    }
}

#[derive(Clone, Debug)]
pub struct AdjointPack {
    pub y: NodalField,
    pub phi: NodalField,
    pub j_value: f64,
    /// `phi + g + eps u`.
    pub gradient_density: NodalField,
    pub newton: NewtonReport,
}

impl AdjointPack {
    /// `J'(u) v`.
    pub fn derivative(&self, mesh: &Mesh, v: &NodalField) -> f64 {
        mesh.inner(&self.gradient_density, v)
    }

    /// Gradient in the lumped-mass metric, `M_L^{-1} M sigma`.
    pub fn lumped_gradient(&self, mesh: &Mesh) -> NodalField {
        let m_sigma = mesh.mass_matrix().matvec(&self.gradient_density.values);
        let values = m_sigma
            .iter()
            .zip(mesh.lumped_mass())
            .map(|(a, m)| a / m)
            .collect();
        NodalField {
            values,
            mesh_id: self.gradient_density.mesh_id,
        }
    }
}

/// Objective value at `u`, returning the state as well.
pub fn evaluate_objective(
    prob: &ProblemData,
    u: &NodalField,
    pert: &Perturbation,
    guess: Option<&NodalField>,
) -> Result<(f64, NodalField, NewtonReport)> {
    prob.check_admissible(u)?;
    pert.validate(&prob.mesh)?;
    let (y, report) = pde::solve_state_from(
        &prob.mesh,
        &prob.coeffs,
        u,
        pert.xi.as_ref(),
        guess,
        &prob.newton,
    )?;
    let j = objective_from_state(prob, u, &y, pert);
    Ok((j, y, report))
}

fn objective_from_state(
    prob: &ProblemData,
    u: &NodalField,
    y: &NodalField,
    pert: &Perturbation,
) -> f64 {
    let mesh = &prob.mesh;
    let r = y.sub(&prob.y_d);
    let mut j = 0.5 * mesh.inner(&r, &r) + mesh.inner(pert.g(prob), u);
    if let Some(eta) = &pert.eta {
        j += mesh.inner(eta, y);
    }
    if pert.tikhonov != 0.0 {
        j += 0.5 * pert.tikhonov * mesh.inner(u, u);
    }
    j
}

#[allow(non_snake_case)]
pub fn evaluate_J(prob: &ProblemData, u: &NodalField, pert: &Perturbation) -> Result<f64> {
    evaluate_objective(prob, u, pert, None).map(|(j, _, _)| j)
}

pub fn evaluate_gradient(
    prob: &ProblemData,
    u: &NodalField,
    pert: &Perturbation,
) -> Result<AdjointPack> {
    Ok(ControlPoint::new(prob, u, pert)?.pack)
}

/// `J''(u)(v1, v2)`, including the Tikhonov contribution `eps <v1, v2>`.
pub fn evaluate_hessian_form(
    prob: &ProblemData,
    u: &NodalField,
    pert: &Perturbation,
    v1: &NodalField,
    v2: &NodalField,
) -> Result<f64> {
    ControlPoint::new(prob, u, pert)?.hessian_form(v1, v2)
}

/// The field `psi_{u,v}` with `<psi, v> = J''(u) v^2 - eps ||v||^2`.
pub fn solve_psi(
    prob: &ProblemData,
    u: &NodalField,
    pert: &Perturbation,
    v: &NodalField,
) -> Result<NodalField> {
    ControlPoint::new(prob, u, pert)?.psi(v)
}

/// State, adjoint and factorized linearization at one control, for repeated
/// first- and second-order evaluations.
pub struct ControlPoint<'p> {
    prob: &'p ProblemData,
    u: NodalField,
    tikhonov: f64,
    lin: Linearization<'p>,
    pub pack: AdjointPack,
}

impl<'p> ControlPoint<'p> {
    pub fn new(prob: &'p ProblemData, u: &NodalField, pert: &Perturbation) -> Result<Self> {
        Self::with_guess(prob, u, pert, None)
    }

    pub fn with_guess(
        prob: &'p ProblemData,
        u: &NodalField,
        pert: &Perturbation,
        guess: Option<&NodalField>,
    ) -> Result<Self> {
        let (j_value, y, newton) = evaluate_objective(prob, u, pert, guess)?;
        Self::from_state(prob, u, pert, y, j_value, newton)
    }

    fn from_state(
        prob: &'p ProblemData,
        u: &NodalField,
        pert: &Perturbation,
        y: NodalField,
        j_value: f64,
        newton: NewtonReport,
    ) -> Result<Self> {
        let mesh = &prob.mesh;
        let lin = Linearization::new(mesh, &prob.coeffs, &y)?;
        let mut source = y.sub(&prob.y_d);
        if let Some(eta) = &pert.eta {
            source = source.add(eta);
        }
        let phi = lin.solve_adjoint(&source)?;
        let mut sigma = phi.add(pert.g(prob));
        if pert.tikhonov != 0.0 {
            sigma = sigma.axpy(pert.tikhonov, u);
        }
        Ok(Self {
            prob,
            u: u.clone(),
            tikhonov: pert.tikhonov,
            lin,
            pack: AdjointPack {
                y,
                phi,
                j_value,
                gradient_density: sigma,
                newton,
            },
        })
    }

    pub fn control(&self) -> &NodalField {
        &self.u
    }

    pub fn linearization(&self) -> &Linearization<'p> {
        &self.lin
    }

    /// `z_{u,v}`.
    pub fn z(&self, v: &NodalField) -> Result<NodalField> {
        self.lin.solve(v)
    }

    /// `J'(u) v`.
    pub fn derivative(&self, v: &NodalField) -> f64 {
        self.pack.derivative(&self.prob.mesh, v)
    }

    pub fn hessian_form(&self, v1: &NodalField, v2: &NodalField) -> Result<f64> {
        let z1 = self.z(v1)?;
        let z2 = if std::ptr::eq(v1, v2) {
            z1.clone()
        } else {
            self.z(v2)?
        };
        Ok(self.hessian_from_z(&z1, &z2, v1, v2))
    }

    /// `J''(u)(v1, v2)` from precomputed `z_{u,v1}`, `z_{u,v2}`.
    pub fn hessian_from_z(
        &self,
        z1: &NodalField,
        z2: &NodalField,
        v1: &NodalField,
        v2: &NodalField,
    ) -> f64 {
        let mesh = &self.prob.mesh;
        let d2f = self.lin.second_derivative_coefficient();
        let phi = &self.pack.phi.values;
        let curvature: f64 = mesh
            .lumped_mass()
            .iter()
            .enumerate()
            .map(|(k, m)| m * phi[k] * d2f[k] * z1.values[k] * z2.values[k])
            .sum();
        let mut q = mesh.inner(z1, z2) - curvature;
        if self.tikhonov != 0.0 {
            q += self.tikhonov * mesh.inner(v1, v2);
        }
        q
    }

    /// Solves `A* psi + f_y psi = (1 - phi f_yy) z_{u,v}`.
    pub fn psi(&self, v: &NodalField) -> Result<NodalField> {
        let mesh = &self.prob.mesh;
        let z = self.z(v)?;
        let mz = mesh.mass_matrix().matvec(&z.values);
        let lumped = mesh.lumped_mass();
        let d2f = self.lin.second_derivative_coefficient();
        let phi = &self.pack.phi.values;
        let load: Vec<f64> = mesh
            .interior_nodes()
            .iter()
            .map(|&k| mz[k] - lumped[k] * phi[k] * d2f[k] * z.values[k])
            .collect();
        self.lin.solve_adjoint_load(&load)
    }
}
