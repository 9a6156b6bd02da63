use log::warn;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField};
use crate::sparse::CsrMatrix;

/// Coefficients of `-div(A grad y) + b . grad y + f(x, y)` with
/// `f(x, y) = c0(x) + c1(x) y + c3(x) y^3`.
///
/// `A` and `b` are constant on each triangle; the reaction coefficients are
/// nodal fields. The interior stiffness-plus-convection matrix is assembled
/// once at construction.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    diffusion: Vec<[[f64; 2]; 2]>,
    lambda_a: f64,
    convection: Vec<[f64; 2]>,
    c0: NodalField,
    c1: NodalField,
    c3: NodalField,
    stiffness: CsrMatrix,
    convection_matrix: CsrMatrix,
}

impl CoefficientSet {
    pub fn new(
        mesh: &Mesh,
        diffusion: Vec<[[f64; 2]; 2]>,
        lambda_a: f64,
        convection: Vec<[f64; 2]>,
        c0: NodalField,
        c1: NodalField,
        c3: NodalField,
    ) -> Result<Self> {
        let nt = mesh.triangles().len();
        if diffusion.len() != nt || convection.len() != nt {
            return Err(Error::InvalidInput(format!(
                "expected {nt} per-triangle coefficients, got {} diffusion and {} convection",
                diffusion.len(),
                convection.len()
            )));
        }
        if !(lambda_a > 0.0 && lambda_a.is_finite()) {
            return Err(Error::Assumption(format!(
                "ellipticity bound lambda_A must be positive, got {lambda_a}"
            )));
        }
        for (t, a) in diffusion.iter().enumerate() {
            let m = min_symmetric_eigenvalue(a);
            if !(m >= lambda_a * (1.0 - 1e-12)) || a.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Assumption(format!(
                    "diffusion on triangle {t} has xi^T A xi >= {m:.6e} |xi|^2, below lambda_A = {lambda_a:.6e}"
                )));
            }
        }
        if convection.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("convection field is not finite".into()));
        }
        for (name, field) in [("c0", &c0), ("c1", &c1), ("c3", &c3)] {
            mesh.check(field)?;
            if !field.is_finite() {
                return Err(Error::InvalidInput(format!("{name} is not finite")));
            }
        }
        for (name, field) in [("c1", &c1), ("c3", &c3)] {
            if let Some(k) = field.values.iter().position(|&v| v < 0.0) {
                let [x1, x2] = mesh.nodes()[k];
                return Err(Error::Assumption(format!(
                    "{name} = {} < 0 at ({x1}, {x2}) violates df/dy >= 0",
                    field.values[k]
                )));
            }
        }

        let (stiffness, convection_matrix) = assemble_interior(mesh, &diffusion, &convection);
        let set = Self {
            diffusion,
            lambda_a,
            convection,
            c0,
            c1,
            c3,
            stiffness,
            convection_matrix,
        };
        let pe = set.mesh_peclet(mesh);
        if pe > 1.0 {
            warn!("mesh Peclet number {pe:.3} exceeds 1; Galerkin convection may oscillate");
        }
        Ok(set)
    }

    /// Constant `A` and `b`; `lambda_A` is the smallest eigenvalue of the
    /// symmetric part of `A`.
    pub fn uniform(
        mesh: &Mesh,
        a: [[f64; 2]; 2],
        b: [f64; 2],
        c0: NodalField,
        c1: NodalField,
        c3: NodalField,
    ) -> Result<Self> {
        let nt = mesh.triangles().len();
        Self::new(
            mesh,
            vec![a; nt],
            min_symmetric_eigenvalue(&a),
            vec![b; nt],
            c0,
            c1,
            c3,
        )
    }

    /// `-Laplace y = u`.
    pub fn laplace(mesh: &Mesh) -> Self {
        Self::uniform(
            mesh,
            [[1.0, 0.0], [0.0, 1.0]],
            [0.0, 0.0],
            mesh.zeros(),
            mesh.zeros(),
            mesh.zeros(),
        )
        .expect("identity diffusion is admissible")
    }

    pub fn lambda_a(&self) -> f64 {
        self.lambda_a
    }

    pub fn diffusion(&self) -> &[[[f64; 2]; 2]] {
        &self.diffusion
    }

    pub fn convection(&self) -> &[[f64; 2]] {
        &self.convection
    }

    pub fn c0(&self) -> &NodalField {
        &self.c0
    }

    pub fn c1(&self) -> &NodalField {
        &self.c1
    }

    pub fn c3(&self) -> &NodalField {
        &self.c3
    }

    /// True when `f` is affine in `y`.
    pub fn is_linear(&self) -> bool {
        self.c3.values.iter().all(|&v| v == 0.0)
    }

    /// Interior diffusion matrix.
    pub fn stiffness_matrix(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Interior convection matrix, `C_ij = int (b . grad w_j) w_i`.
    pub fn convection_matrix(&self) -> &CsrMatrix {
        &self.convection_matrix
    }

    /// `h ||b||_inf / (2 lambda_A)`.
    pub fn mesh_peclet(&self, mesh: &Mesh) -> f64 {
        let bmax = self
            .convection
            .iter()
            .map(|b| b[0].hypot(b[1]))
            .fold(0.0, f64::max);
        mesh.h() * bmax / (2.0 * self.lambda_a)
    }

    #[inline]
    pub fn f(&self, node: usize, y: f64) -> f64 {
        self.c0.values[node] + self.c1.values[node] * y + self.c3.values[node] * y * y * y
    }

    #[inline]
    pub fn df_dy(&self, node: usize, y: f64) -> f64 {
        self.c1.values[node] + 3.0 * self.c3.values[node] * y * y
    }

    #[inline]
    pub fn d2f_dy2(&self, node: usize, y: f64) -> f64 {
        6.0 * self.c3.values[node] * y
    }

    /// Same `A` and `b`, new reaction coefficients.
    pub fn with_reaction(&self, c0: NodalField, c1: NodalField, c3: NodalField) -> Result<Self> {
        for (name, field) in [("c1", &c1), ("c3", &c3)] {
            if field.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Assumption(format!("{name} must be nonnegative and finite")));
            }
        }
        Ok(Self {
            c0,
            c1,
            c3,
            ..self.clone()
        })
    }
}

fn min_symmetric_eigenvalue(a: &[[f64; 2]; 2]) -> f64 {
    let (p, q, r) = (a[0][0], 0.5 * (a[0][1] + a[1][0]), a[1][1]);
    let mean = 0.5 * (p + r);
    let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    mean - rad
}

fn assemble_interior(
    mesh: &Mesh,
    diffusion: &[[[f64; 2]; 2]],
    convection: &[[f64; 2]],
) -> (CsrMatrix, CsrMatrix) {
    let ni = mesh.interior_nodes().len();
    let mut stiff = Vec::with_capacity(9 * mesh.triangles().len());
    let mut conv = Vec::with_capacity(9 * mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let g = mesh.barycentric_gradients(t);
        let a = &diffusion[t];
        let b = convection[t];
        for i in 0..3 {
            let Some(row) = mesh.interior_slot(tri[i]) else {
                continue;
            };
            for j in 0..3 {
                let Some(col) = mesh.interior_slot(tri[j]) else {
                    continue;
                };
                // int (A grad w_j) . grad w_i
                let agj = [
                    a[0][0] * g[j][0] + a[0][1] * g[j][1],
                    a[1][0] * g[j][0] + a[1][1] * g[j][1],
                ];
                stiff.push((row, col, area * (agj[0] * g[i][0] + agj[1] * g[i][1])));
                // int (b . grad w_j) w_i, with int w_i = |T| / 3
                conv.push((row, col, area / 3.0 * (b[0] * g[j][0] + b[1] * g[j][1])));
            }
        }
    }
    (
        CsrMatrix::from_triplets(ni, ni, &stiff),
        CsrMatrix::from_triplets(ni, ni, &conv),
    )
}
