//! Finite-element solves for the state equation and its linearizations.
//!
//! Unknowns are the interior nodal values; boundary values are zero. The
//! principal part and convection use the Galerkin matrices, the reaction
//! term is lumped, and sources are integrated against the consistent mass
//! matrix.

mod coefficients;

pub use coefficients::CoefficientSet;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField};
use crate::sparse::{BandLu, CsrMatrix};

/// Interior operator `K + diag(m_i a_i)`, or its transpose.
pub fn assemble_operator(
    mesh: &Mesh,
    coeffs: &CoefficientSet,
    a: &NodalField,
    adjoint: bool,
) -> Result<CsrMatrix> {
    mesh.check(a)?;
    if let Some(k) = a.values.iter().position(|&v| !(v >= 0.0)) {
        let [x1, x2] = mesh.nodes()[k];
        return Err(Error::Assumption(format!(
            "reaction coefficient {} at ({x1}, {x2}) must be nonnegative",
            a.values[k]
        )));
    }
    let lumped = mesh.lumped_mass();
    let diag: Vec<f64> = mesh
        .interior_nodes()
        .iter()
        .map(|&k| lumped[k] * a.values[k])
        .collect();
    let op = coeffs
        .stiffness_matrix()
        .add_scaled(1.0, coeffs.convection_matrix())
        .add_diagonal(&diag);
    Ok(if adjoint { op.transpose() } else { op })
}

/// Interior components of `M h`.
pub fn load_vector(mesh: &Mesh, h: &NodalField) -> Vec<f64> {
    mesh.restrict(&mesh.mass_matrix().matvec(&h.values))
}

/// Solves `-div(A grad y) + b . grad y + a y = h` (or the adjoint problem
/// `-div(A^T grad y) - div(b y) + a y = h`) with homogeneous Dirichlet data.
pub fn solve_linear(
    mesh: &Mesh,
    coeffs: &CoefficientSet,
    a: &NodalField,
    h: &NodalField,
    adjoint: bool,
) -> Result<NodalField> {
    mesh.check(h)?;
    let op = assemble_operator(mesh, coeffs, a, adjoint)?;
    let lu = BandLu::factor(&op)?;
    let y = lu.solve(&load_vector(mesh, h));
    finite_field(mesh, mesh.extend(&y))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub min_damping: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-11,
            max_iterations: 50,
            min_damping: 2f64.powi(-20),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonReport {
    /// Length of `residual_history`: the initial residual plus one entry per
    /// accepted update.
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub damping_used: bool,
    pub residual_history: Vec<f64>,
}

/// Solves the semilinear state equation for `u + xi` by damped Newton
/// starting from `y = 0`.
pub fn solve_state(
    mesh: &Mesh,
    coeffs: &CoefficientSet,
    u: &NodalField,
    xi: Option<&NodalField>,
    config: &NewtonConfig,
) -> Result<(NodalField, NewtonReport)> {
    solve_state_from(mesh, coeffs, u, xi, None, config)
}

/// As [`solve_state`], starting Newton from `guess` when given.
pub fn solve_state_from(
    mesh: &Mesh,
    coeffs: &CoefficientSet,
    u: &NodalField,
    xi: Option<&NodalField>,
    guess: Option<&NodalField>,
    config: &NewtonConfig,
) -> Result<(NodalField, NewtonReport)> {
    mesh.check(u)?;
    let source = match xi {
        Some(xi) => {
            mesh.check(xi)?;
            u.add(xi)
        }
        None => u.clone(),
    };
    let rhs = load_vector(mesh, &source);
    let interior = mesh.interior_nodes();
    let lumped = mesh.lumped_mass();
    let base = coeffs
        .stiffness_matrix()
        .add_scaled(1.0, coeffs.convection_matrix());

    let residual = |y: &[f64]| -> Vec<f64> {
        let mut r = base.matvec(y);
        for (s, &k) in interior.iter().enumerate() {
            r[s] += lumped[k] * coeffs.f(k, y[s]) - rhs[s];
        }
        r
    };

    let mut y = match guess {
        Some(g) => {
            mesh.check(g)?;
            mesh.restrict(&g.values)
        }
        None => vec![0.0; interior.len()],
    };
    let mut r = residual(&y);
    let mut rnorm = norm2(&r);
    let mut history = vec![rnorm];
    let mut damping_used = false;
    let mut last_lu: Option<BandLu> = None;
    // A warm start always takes one step so that the result tracks the data
    // even when the guess already meets the tolerance.
    let mut must_step = guess.is_some() && rnorm > 0.0;

    while rnorm > config.tolerance || must_step {
        must_step = false;
        if !rnorm.is_finite() || history.len() > config.max_iterations {
            return Err(Error::NewtonFailure {
                residual_history: history,
            });
        }
        let diag: Vec<f64> = interior
            .iter()
            .enumerate()
            .map(|(s, &k)| lumped[k] * coeffs.df_dy(k, y[s]))
            .collect();
        let lu = BandLu::factor(&base.add_diagonal(&diag))?;
        let delta = lu.solve(&r);
        last_lu = Some(lu);

        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = y.iter().zip(&delta).map(|(a, d)| a - t * d).collect();
            let rt = residual(&trial);
            let nt = norm2(&rt);
            if nt < rnorm || t <= config.min_damping {
                y = trial;
                r = rt;
                rnorm = nt;
                break;
            }
            t *= 0.5;
            damping_used = true;
        }
        history.push(rnorm);
    }

    // One refinement step with the last factorization pushes the residual
    // towards rounding level, so nearby data give consistently accurate
    // states.
    if let Some(lu) = last_lu.filter(|_| rnorm > 0.0) {
        let delta = lu.solve(&r);
        let trial: Vec<f64> = y.iter().zip(&delta).map(|(a, d)| a - d).collect();
        let nt = norm2(&residual(&trial));
        if nt < rnorm {
            y = trial;
            rnorm = nt;
            history.push(rnorm);
        }
    }

    let report = NewtonReport {
        iterations: history.len(),
        final_residual: rnorm,
        converged: true,
        damping_used,
        residual_history: history,
    };
    Ok((finite_field(mesh, mesh.extend(&y))?, report))
}

/// Factorized linearization `K + diag(m_i f_y(x_i, y_i))` about a state.
///
/// All derivative solves about the same state share one factorization.
pub struct Linearization<'m> {
    mesh: &'m Mesh,
    state: NodalField,
    d2f: Vec<f64>,
    lu: BandLu,
}

impl<'m> Linearization<'m> {
    pub fn new(mesh: &'m Mesh, coeffs: &CoefficientSet, state: &NodalField) -> Result<Self> {
        mesh.check(state)?;
        let a = mesh.field(
            (0..mesh.node_count())
                .map(|k| coeffs.df_dy(k, state.values[k]))
                .collect(),
        )?;
        let op = assemble_operator(mesh, coeffs, &a, false)?;
        let lu = BandLu::factor(&op)?;
        let d2f = (0..mesh.node_count())
            .map(|k| coeffs.d2f_dy2(k, state.values[k]))
            .collect();
        Ok(Self {
            mesh,
            state: state.clone(),
            d2f,
            lu,
        })
    }

    pub fn state(&self) -> &NodalField {
        &self.state
    }

    /// Nodal `f_yy(x, y)`.
    pub fn second_derivative_coefficient(&self) -> &[f64] {
        &self.d2f
    }

    pub fn condition_estimate(&self) -> f64 {
        self.lu.condition_estimate()
    }

    /// Solves the linearized equation with source `v`.
    pub fn solve(&self, v: &NodalField) -> Result<NodalField> {
        self.mesh.check(v)?;
        let z = self.lu.solve(&load_vector(self.mesh, v));
        finite_field(self.mesh, self.mesh.extend(&z))
    }

    /// Solves the adjoint equation with right-hand side `M r`.
    pub fn solve_adjoint(&self, r: &NodalField) -> Result<NodalField> {
        self.mesh.check(r)?;
        let p = self.lu.solve_transpose(&load_vector(self.mesh, r));
        finite_field(self.mesh, self.mesh.extend(&p))
    }

    /// Solves the adjoint equation with an already assembled interior load.
    pub fn solve_adjoint_load(&self, load: &[f64]) -> Result<NodalField> {
        let p = self.lu.solve_transpose(load);
        finite_field(self.mesh, self.mesh.extend(&p))
    }

    /// Second derivative of the control-to-state map in directions
    /// `z1 = y'(u) v1`, `z2 = y'(u) v2`: the linearized equation with
    /// source `-f_yy z1 z2` (lumped).
    pub fn solve_second(&self, z1: &NodalField, z2: &NodalField) -> Result<NodalField> {
        self.mesh.check(z1)?;
        self.mesh.check(z2)?;
        let lumped = self.mesh.lumped_mass();
        let rhs: Vec<f64> = self
            .mesh
            .interior_nodes()
            .iter()
            .map(|&k| -lumped[k] * self.d2f[k] * z1.values[k] * z2.values[k])
            .collect();
        let w = self.lu.solve(&rhs);
        finite_field(self.mesh, self.mesh.extend(&w))
    }
}

/// `y'(u) v`.
pub fn solve_linearized(
    mesh: &Mesh,
    coeffs: &CoefficientSet,
    y_u: &NodalField,
    v: &NodalField,
) -> Result<NodalField> {
    Linearization::new(mesh, coeffs, y_u)?.solve(v)
}

/// `y''(u)[v1, v2]`.
pub fn solve_second_derivative(
    mesh: &Mesh,
    coeffs: &CoefficientSet,
    y_u: &NodalField,
    v1: &NodalField,
    v2: &NodalField,
) -> Result<NodalField> {
    let lin = Linearization::new(mesh, coeffs, y_u)?;
    let z1 = lin.solve(v1)?;
    let z2 = lin.solve(v2)?;
    lin.solve_second(&z1, &z2)
}

fn finite_field(mesh: &Mesh, values: Vec<f64>) -> Result<NodalField> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    mesh.field(values)
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
