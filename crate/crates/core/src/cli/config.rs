//! Experiment configuration files (TOML).
//!
//! Only `[mesh]` and `[bounds]` are required; every other block falls back
//! to the defaults documented on its fields.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::expr::Expression;
use crate::control::ProblemData;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField};
use crate::optimizer::OptimizerConfig;
use crate::pde::{CoefficientSet, NewtonConfig};
use crate::stability::{geometric_grid, PerturbationFamily};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mesh: MeshConfig,
    #[serde(default)]
    pub coefficients: CoefficientConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub state: StateConfig,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    /// Defaults to `output`; overridden by `OUTPUT_DIR` and `--output`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub rng_seed: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub n_cells_per_side: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientConfig {
    /// Diffusion tensor outside all regions. Default: identity.
    pub a: [[f64; 2]; 2],
    /// Boxes with their own diffusion tensor; a triangle takes the last
    /// region containing its centroid.
    pub regions: Vec<RegionConfig>,
    /// Constant convection field. Default: zero.
    pub b: [f64; 2],
    /// `f(x, y) = c0 + c1 y + c3 y^3`. Defaults: zero.
    pub c0: Expression,
    pub c1: Expression,
    pub c3: Expression,
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        Self {
            a: [[1.0, 0.0], [0.0, 1.0]],
            regions: Vec::new(),
            b: [0.0, 0.0],
            c0: Expression::constant(0.0),
            c1: Expression::constant(0.0),
            c3: Expression::constant(0.0),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub x1: [f64; 2],
    pub x2: [f64; 2],
    pub a: [[f64; 2]; 2],
}

impl RegionConfig {
    fn contains(&self, [x1, x2]: [f64; 2]) -> bool {
        (self.x1[0]..=self.x1[1]).contains(&x1) && (self.x2[0]..=self.x2[1]).contains(&x2)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Default: zero.
    pub y_d: Expression,
    /// Linear control cost. Default: zero.
    pub g: Expression,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            y_d: Expression::constant(0.0),
            g: Expression::constant(0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub u_a: f64,
    pub u_b: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateConfig {
    /// Control used by `solve-state`. Default: zero.
    pub u: Expression,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self {
            u: Expression::constant(0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Xi,
    Eta,
    G,
    Tikhonov,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Shape of the state-equation perturbation. Default:
    /// `sin(pi*x1)*sin(pi*x2)`.
    pub xi: Expression,
    /// Shape of the tracking perturbation. Default: `1`.
    pub eta: Expression,
    /// Shape of the perturbation of `g`. Default: `1`.
    pub g: Expression,
    /// Components scaled by `eps`. Default: `["xi"]`.
    pub active: Vec<Component>,
    /// Geometric grid from `eps_max` down to `eps_min`. Defaults: 0.1,
    /// 1e-4, 12 points.
    pub eps_max: f64,
    pub eps_min: f64,
    pub n_eps: usize,
    /// Default: true.
    pub warm_start: bool,
    /// Distance floor for slope fits. Default: `10 h^2`.
    pub floor: Option<f64>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            xi: Expression::parse("sin(pi*x1)*sin(pi*x2)").expect("valid default"),
            eta: Expression::constant(1.0),
            g: Expression::constant(1.0),
            active: vec![Component::Xi],
            eps_max: 0.1,
            eps_min: 1e-4,
            n_eps: 12,
            warm_start: true,
            floor: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Samples per probe. Default: 40.
    pub n_samples: usize,
    /// Radius of the `Linf` state ball around `y_bar` for the coercivity
    /// quotients. Default: half the empirical state bound.
    pub alpha: Option<f64>,
    /// Default: `[0.01, 0.1, 1]`.
    pub kappa_candidates: Vec<f64>,
    /// Default: 0.1.
    pub eps_ball: f64,
    /// Finite-difference steps of `verify-derivatives`, each in `(0, 1]`.
    /// Default: `[1e-1, 1e-2, 1e-3, 1e-4]`.
    pub fd_steps: Vec<f64>,
    /// Increasing band widths for the measure condition. Default: 5 points
    /// from 1e-3 to 1e-1.
    pub measure_eps: Vec<f64>,
    /// Cells per side for `convergence-study`. Default: `[8, 16, 32]`.
    pub levels: Vec<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            n_samples: 40,
            alpha: None,
            kappa_candidates: vec![0.01, 0.1, 1.0],
            eps_ball: 0.1,
            fd_steps: vec![1e-1, 1e-2, 1e-3, 1e-4],
            measure_eps: geometric_grid(1e-3, 1e-1, 5),
            levels: vec![8, 16, 32],
        }
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| toml_error("<syntax>", &e, text))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        toml_error(&path, e.inner(), text)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn toml_error(path: &str, e: &toml::de::Error, text: &str) -> Error {
    let message = e.message().trim_end().to_string();
    let message = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line}, column {column}: {message}")
        }
        None => message,
    };
    Error::config(if path.is_empty() { "." } else { path }, message)
}

fn min_eigenvalue(a: &[[f64; 2]; 2]) -> f64 {
    let (p, q, r) = (a[0][0], 0.5 * (a[0][1] + a[1][0]), a[1][1]);
    0.5 * (p + r) - (0.25 * (p - r).powi(2) + q * q).sqrt()
}

impl ExperimentConfig {
    /// Checks everything that can be checked without solving, including
    /// that every expression is finite on the mesh and that `c1, c3 >= 0`
    /// at every node.
    pub fn validate(&self) -> Result<()> {
        let n = self.mesh.n_cells_per_side;
        let mesh =
            Mesh::new(n).map_err(|e| Error::config("mesh.n_cells_per_side", e.to_string()))?;
        let (ua, ub) = (self.bounds.u_a, self.bounds.u_b);
        if !(ua.is_finite() && ub.is_finite() && ua < ub) {
            return Err(Error::config(
                "bounds",
                format!("need finite u_a < u_b, got u_a = {ua}, u_b = {ub}"),
            ));
        }
        let c = &self.coefficients;
        let tensors = std::iter::once(("coefficients.a".to_string(), &c.a)).chain(
            c.regions
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("coefficients.regions[{i}].a"), &r.a)),
        );
        for (field, a) in tensors {
            if a.iter().flatten().any(|v| !v.is_finite()) || !(min_eigenvalue(a) > 0.0) {
                return Err(Error::config(field, "diffusion must be uniformly elliptic"));
            }
        }
        for (i, r) in c.regions.iter().enumerate() {
            if !(r.x1[0] <= r.x1[1] && r.x2[0] <= r.x2[1]) {
                return Err(Error::config(
                    format!("coefficients.regions[{i}]"),
                    "box corners must be ordered",
                ));
            }
        }
        if c.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("coefficients.b", "must be finite"));
        }
        for (field, e) in self.expressions() {
            let values = e
                .on_mesh(&mesh)
                .map_err(|err| Error::config(field, format!("{:?}: {err}", e.source())))?;
            if field == "coefficients.c1" || field == "coefficients.c3" {
                if let Some(k) = values.values.iter().position(|&v| v < 0.0) {
                    let [x1, x2] = mesh.nodes()[k];
                    return Err(Error::config(
                        field,
                        format!(
                            "value {} < 0 at ({x1}, {x2}) violates df/dy >= 0",
                            values.values[k]
                        ),
                    ));
                }
            }
        }
        self.optimizer.validate()?;
        let nw = &self.newton;
        if !(nw.tolerance > 0.0 && nw.max_iterations > 0 && nw.min_damping > 0.0) {
            return Err(Error::config("newton", "tolerance, max_iterations and min_damping must be positive"));
        }
        let p = &self.perturbation;
        if !(p.eps_min > 0.0 && p.eps_max > p.eps_min && p.eps_max.is_finite()) {
            return Err(Error::config("perturbation", "need 0 < eps_min < eps_max"));
        }
        if p.n_eps < 2 {
            return Err(Error::config("perturbation.n_eps", "need at least 2 grid points"));
        }
        if p.floor.is_some_and(|f| !(f >= 0.0 && f.is_finite())) {
            return Err(Error::config("perturbation.floor", "must be nonnegative"));
        }
        let d = &self.diagnostics;
        if d.n_samples == 0 {
            return Err(Error::config("diagnostics.n_samples", "must be positive"));
        }
        if d.alpha.is_some_and(|a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::config("diagnostics.alpha", "must be positive"));
        }
        if !(d.eps_ball > 0.0) {
            return Err(Error::config("diagnostics.eps_ball", "must be positive"));
        }
        if d.fd_steps.is_empty() || d.fd_steps.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::config("diagnostics.fd_steps", "need steps in (0, 1]"));
        }
        if d.measure_eps.is_empty()
            || !(d.measure_eps[0] > 0.0)
            || d.measure_eps.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::config(
                "diagnostics.measure_eps",
                "need positive, strictly increasing band widths",
            ));
        }
        if d.kappa_candidates.iter().any(|&k| !k.is_finite()) {
            return Err(Error::config("diagnostics.kappa_candidates", "must be finite"));
        }
        if d.levels.len() < 2 || d.levels.contains(&0) {
            return Err(Error::config("diagnostics.levels", "need at least two positive levels"));
        }
        Ok(())
    }

    fn expressions(&self) -> [(&'static str, &Expression); 9] {
        let c = &self.coefficients;
        let p = &self.perturbation;
        [
            ("coefficients.c0", &c.c0),
            ("coefficients.c1", &c.c1),
            ("coefficients.c3", &c.c3),
            ("objective.y_d", &self.objective.y_d),
            ("objective.g", &self.objective.g),
            ("state.u", &self.state.u),
            ("perturbation.xi", &p.xi),
            ("perturbation.eta", &p.eta),
            ("perturbation.g", &p.g),
        ]
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::new(self.mesh.n_cells_per_side)
    }

    /// Coefficients on `mesh`; regions are assigned by triangle centroid.
    pub fn coefficient_set(&self, mesh: &Mesh) -> Result<CoefficientSet> {
        let c = &self.coefficients;
        let diffusion: Vec<[[f64; 2]; 2]> = (0..mesh.triangles().len())
            .map(|t| {
                let centroid = mesh.triangle_centroid(t);
                c.regions
                    .iter()
                    .rev()
                    .find(|r| r.contains(centroid))
                    .map_or(c.a, |r| r.a)
            })
            .collect();
        let lambda_a = diffusion.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
        CoefficientSet::new(
            mesh,
            diffusion,
            lambda_a,
            vec![c.b; mesh.triangles().len()],
            c.c0.on_mesh(mesh)?,
            c.c1.on_mesh(mesh)?,
            c.c3.on_mesh(mesh)?,
        )
    }

    pub fn problem(&self) -> Result<ProblemData> {
        let mesh = self.mesh()?;
        self.problem_on(mesh)
    }

    pub fn problem_on(&self, mesh: Mesh) -> Result<ProblemData> {
        let coeffs = self.coefficient_set(&mesh)?;
        let y_d = self.objective.y_d.on_mesh(&mesh)?;
        let g = self.objective.g.on_mesh(&mesh)?;
        let mut prob = ProblemData::new(mesh, coeffs, y_d, g, self.bounds.u_a, self.bounds.u_b)?;
        prob.newton = self.newton.clone();
        Ok(prob)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            rng_seed: self.rng_seed,
            ..self.optimizer.clone()
        }
    }

    pub fn eps_grid(&self) -> Vec<f64> {
        let p = &self.perturbation;
        geometric_grid(p.eps_max, p.eps_min, p.n_eps)
    }

    pub fn family(&self, mesh: &Mesh) -> Result<PerturbationFamily> {
        let p = &self.perturbation;
        let on = |c: Component| p.active.contains(&c);
        let shape = |e: &Expression, c: Component| -> Result<NodalField> {
            if on(c) {
                e.on_mesh(mesh)
            } else {
                Ok(mesh.zeros())
            }
        };
        PerturbationFamily::new(
            mesh,
            shape(&p.xi, Component::Xi)?,
            shape(&p.eta, Component::Eta)?,
            shape(&p.g, Component::G)?,
            on(Component::Xi),
            on(Component::Eta),
            on(Component::G),
            on(Component::Tikhonov),
            self.eps_grid(),
        )
    }
}
