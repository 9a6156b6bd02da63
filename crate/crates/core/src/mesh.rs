//! Structured P1 triangulation of the unit square with exact quadrature for
//! piecewise-linear fields.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Identity of a structured mesh; two meshes with the same resolution are
/// identical, so the resolution is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MeshId(pub usize);

/// Uniform triangulation of `(0,1)^2`. Every grid square is split along the
/// diagonal from its lower-left to its upper-right corner.
#[derive(Clone, Debug)]
pub struct Mesh {
    n: usize,
    h: f64,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    // gradients of the three barycentric coordinates, per triangle
    grads: Vec<[[f64; 2]; 3]>,
    boundary_nodes: Vec<usize>,
    interior_nodes: Vec<usize>,
    // node -> position in `interior_nodes`
    interior_slot: Vec<Option<usize>>,
    mass: CsrMatrix,
    lumped: Vec<f64>,
    laplace: CsrMatrix,
}

/// Scalar P1 function given by its nodal values.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalField {
    pub values: Vec<f64>,
    pub mesh_id: MeshId,
}

/// Norms available for nodal fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    L1,
    L2,
    /// Maximum nodal modulus; exact for the P1 interpolant.
    Linf,
    /// `(int |grad v|^2)^(1/2)`.
    H10,
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            "linf" | "c" => Ok(NormKind::Linf),
            "h10" | "h1_0" => Ok(NormKind::H10),
            other => Err(Error::InvalidInput(format!("unknown norm kind `{other}`"))),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NormKind::L1 => "L1",
            NormKind::L2 => "L2",
            NormKind::Linf => "Linf",
            NormKind::H10 => "H10",
        };
        f.write_str(s)
    }
}

impl Mesh {
    pub fn new(n_cells_per_side: usize) -> Result<Self> {
        let n = n_cells_per_side;
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "n_cells_per_side must be at least 2, got {n}"
            )));
        }
        let h = 1.0 / n as f64;
        let side = n + 1;
        let node = |i: usize, j: usize| j * side + i;

        let mut nodes = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                nodes.push([i as f64 * h, j as f64 * h]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (sw, se, ne, nw) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
                triangles.push([sw, se, ne]);
                triangles.push([sw, ne, nw]);
            }
        }

        let mut areas = Vec::with_capacity(triangles.len());
        let mut grads = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let [p0, p1, p2] = [nodes[t[0]], nodes[t[1]], nodes[t[2]]];
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            let area = 0.5 * det;
            let g = |a: [f64; 2], b: [f64; 2]| [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
            areas.push(area);
            grads.push([g(p1, p2), g(p2, p0), g(p0, p1)]);
        }

        let mut boundary_nodes = Vec::new();
        let mut interior_nodes = Vec::new();
        let mut interior_slot = vec![None; nodes.len()];
        for j in 0..side {
            for i in 0..side {
                let k = node(i, j);
                if i == 0 || j == 0 || i == n || j == n {
                    boundary_nodes.push(k);
                } else {
                    interior_slot[k] = Some(interior_nodes.len());
                    interior_nodes.push(k);
                }
            }
        }

        let nn = nodes.len();
        let mut mass_t = Vec::with_capacity(9 * triangles.len());
        let mut lap_t = Vec::with_capacity(9 * triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let area = areas[t];
            let gr = &grads[t];
            for a in 0..3 {
                for b in 0..3 {
                    let m = if a == b { area / 6.0 } else { area / 12.0 };
                    mass_t.push((tri[a], tri[b], m));
                    let k = area * (gr[a][0] * gr[b][0] + gr[a][1] * gr[b][1]);
                    lap_t.push((tri[a], tri[b], k));
                }
            }
        }
        let mass = CsrMatrix::from_triplets(nn, nn, &mass_t);
        let laplace = CsrMatrix::from_triplets(nn, nn, &lap_t);
        let lumped = (0..nn).map(|r| mass.row(r).map(|(_, v)| v).sum()).collect();

        Ok(Self {
            n,
            h,
            nodes,
            triangles,
            areas,
            grads,
            boundary_nodes,
            interior_nodes,
            interior_slot,
            mass,
            lumped,
            laplace,
        })
    }

    pub fn id(&self) -> MeshId {
        MeshId(self.n)
    }

    pub fn n_cells_per_side(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    /// Gradients of the barycentric coordinates of triangle `t`.
    pub fn barycentric_gradients(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.grads[t]
    }

    pub fn triangle_centroid(&self, t: usize) -> [f64; 2] {
        let tri = self.triangles[t];
        let mut c = [0.0; 2];
        for &k in &tri {
            c[0] += self.nodes[k][0] / 3.0;
            c[1] += self.nodes[k][1] / 3.0;
        }
        c
    }

    pub fn area_total(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.interior_slot[node].is_none()
    }

    pub fn interior_slot(&self, node: usize) -> Option<usize> {
        self.interior_slot[node]
    }

    /// Consistent P1 mass matrix over all nodes.
    pub fn mass_matrix(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Row sums of the mass matrix, `int w_i dx`.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    /// Laplace stiffness matrix over all nodes.
    pub fn laplace_matrix(&self) -> &CsrMatrix {
        &self.laplace
    }

    /// Restriction of a full nodal vector to the interior nodes.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior_nodes.iter().map(|&k| full[k]).collect()
    }

    /// Extension of interior values by zero on the boundary.
    pub fn extend(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.node_count()];
        for (&k, &v) in self.interior_nodes.iter().zip(interior) {
            full[k] = v;
        }
        full
    }

    pub fn zeros(&self) -> NodalField {
        self.constant(0.0)
    }

    pub fn constant(&self, c: f64) -> NodalField {
        NodalField {
            values: vec![c; self.node_count()],
            mesh_id: self.id(),
        }
    }

    /// Wraps raw nodal values, checking their count.
    pub fn field(&self, values: Vec<f64>) -> Result<NodalField> {
        if values.len() != self.node_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} nodal values, got {}",
                self.node_count(),
                values.len()
            )));
        }
        Ok(NodalField {
            values,
            mesh_id: self.id(),
        })
    }

    /// Nodal interpolation of a pointwise function.
    pub fn interpolate<F: Fn(f64, f64) -> f64>(&self, expr: F) -> Result<NodalField> {
        let mut values = Vec::with_capacity(self.node_count());
        for &[x1, x2] in &self.nodes {
            let v = expr(x1, x2);
            if !v.is_finite() {
                return Err(Error::NonFinite { x1, x2 });
            }
            values.push(v);
        }
        Ok(NodalField {
            values,
            mesh_id: self.id(),
        })
    }

    pub fn check(&self, field: &NodalField) -> Result<()> {
        if field.mesh_id != self.id() {
            return Err(Error::MeshMismatch {
                expected: self.n,
                found: field.mesh_id.0,
            });
        }
        if field.values.len() != self.node_count() {
            return Err(Error::InvalidInput(format!(
                "field has {} values for {} nodes",
                field.values.len(),
                self.node_count()
            )));
        }
        Ok(())
    }

    pub fn norm(&self, field: &NodalField, kind: NormKind) -> f64 {
        debug_assert_eq!(field.mesh_id, self.id());
        let v = &field.values;
        match kind {
            NormKind::L1 => self
                .triangles
                .iter()
                .zip(&self.areas)
                .map(|(t, &a)| abs_linear_integral(a, [v[t[0]], v[t[1]], v[t[2]]]))
                .sum(),
            NormKind::L2 => self.inner(field, field).max(0.0).sqrt(),
            NormKind::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            NormKind::H10 => quad_form(&self.laplace, v).max(0.0).sqrt(),
        }
    }

    /// `(int |v|^p dx)^(1/p)` for even `p`, exact for P1 fields.
    pub fn lp_norm_even(&self, field: &NodalField, p: u32) -> f64 {
        assert!(p >= 2 && p.is_multiple_of(2), "p must be even");
        let v = &field.values;
        // int_T (sum l_i v_i)^p = 2|T| p!/(p+2)! h_p(v0, v1, v2)
        let factor = 2.0 / ((p + 1) as f64 * (p + 2) as f64);
        let total: f64 = self
            .triangles
            .iter()
            .zip(&self.areas)
            .map(|(t, &a)| a * factor * complete_homogeneous(p, [v[t[0]], v[t[1]], v[t[2]]]))
            .sum();
        total.max(0.0).powf(1.0 / p as f64)
    }

    /// Exact `int a b dx` for P1 fields.
    pub fn inner(&self, a: &NodalField, b: &NodalField) -> f64 {
        bilinear(&self.mass, &a.values, &b.values)
    }

    /// `sum_i m_i a_i b_i` with the lumped mass.
    pub fn lumped_inner(&self, a: &NodalField, b: &NodalField) -> f64 {
        self.lumped
            .iter()
            .zip(a.values.iter().zip(&b.values))
            .map(|(m, (x, y))| m * x * y)
            .sum()
    }

    /// Exact integral of a P1 field.
    pub fn integral(&self, a: &NodalField) -> f64 {
        self.lumped.iter().zip(&a.values).map(|(m, x)| m * x).sum()
    }

    /// Measure of `{x : |s(x)| <= eps}` for the P1 interpolant `s`.
    pub fn sublevel_band_measure(&self, field: &NodalField, eps: f64) -> f64 {
        let v = &field.values;
        self.triangles
            .iter()
            .zip(&self.areas)
            .map(|(t, &a)| {
                let vals = [v[t[0]], v[t[1]], v[t[2]]];
                let below = |level: f64, strict: bool| area_below(a, vals, level, strict);
                below(eps, false) - below(-eps, true)
            })
            .sum()
    }
}

fn bilinear(m: &CsrMatrix, a: &[f64], b: &[f64]) -> f64 {
    (0..m.nrows())
        .map(|r| a[r] * m.row(r).map(|(c, v)| v * b[c]).sum::<f64>())
        .sum()
}

fn quad_form(m: &CsrMatrix, a: &[f64]) -> f64 {
    bilinear(m, a, a)
}

/// `int_T |l|` for a linear function with vertex values `vals`.
fn abs_linear_integral(area: f64, vals: [f64; 3]) -> f64 {
    let mean = (vals[0] + vals[1] + vals[2]) / 3.0;
    let pos = vals.iter().filter(|&&x| x > 0.0).count();
    let neg = vals.iter().filter(|&&x| x < 0.0).count();
    if pos == 0 || neg == 0 {
        return area * mean.abs();
    }
    // one vertex is alone on its side of the zero line
    let lone_positive = pos == 1;
    let lone = vals
        .iter()
        .position(|&x| if lone_positive { x > 0.0 } else { x < 0.0 })
        .unwrap();
    let a = vals[lone];
    let others = [vals[(lone + 1) % 3], vals[(lone + 2) % 3]];
    let frac = others.iter().map(|&b| a / (a - b)).product::<f64>();
    let lone_integral = area * frac * a / 3.0;
    let total = area * mean;
    // int |l| = s (2 int_lone l - int_T l), s the sign of the lone vertex
    (2.0 * lone_integral - total).abs()
}

/// Area of `{l < level}` (strict) or `{l <= level}` inside a triangle.
fn area_below(area: f64, mut vals: [f64; 3], level: f64, strict: bool) -> f64 {
    vals.sort_by(|a, b| a.total_cmp(b));
    let [v0, v1, v2] = vals;
    let inside = |v: f64| if strict { v < level } else { v <= level };
    if !inside(v0) {
        return 0.0;
    }
    if inside(v2) {
        return area;
    }
    // v0 is inside, v2 is not, so v2 > v0 and the ratios below are finite
    if level <= v1 {
        if v1 == v0 {
            return 0.0;
        }
        area * (level - v0).powi(2) / ((v1 - v0) * (v2 - v0))
    } else {
        area * (1.0 - (v2 - level).powi(2) / ((v2 - v0) * (v2 - v1)))
    }
}

/// Complete homogeneous symmetric polynomial of degree `p` in three variables.
fn complete_homogeneous(p: u32, v: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..=p {
        for j in 0..=(p - i) {
            let k = p - i - j;
            s += v[0].powi(i as i32) * v[1].powi(j as i32) * v[2].powi(k as i32);
        }
    }
    s
}

impl NodalField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> NodalField {
        NodalField {
            values: self.values.iter().map(|&x| f(x)).collect(),
            mesh_id: self.mesh_id,
        }
    }

    pub fn zip_map(&self, other: &NodalField, f: impl Fn(f64, f64) -> f64) -> NodalField {
        assert_eq!(self.mesh_id, other.mesh_id, "fields live on different meshes");
        NodalField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            mesh_id: self.mesh_id,
        }
    }

    pub fn add(&self, other: &NodalField) -> NodalField {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &NodalField) -> NodalField {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> NodalField {
        self.map(|a| c * a)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &NodalField) -> NodalField {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
