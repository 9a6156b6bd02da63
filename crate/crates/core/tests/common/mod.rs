//! Dense reference implementation of the P1 discretization, written from
//! scratch for the oracles. Only node coordinates are taken from the mesh
//! under test; triangles, matrices and solves are rebuilt here.

#![allow(dead_code)]

use ocstab::{CoefficientSet, Mesh, NodalField, ProblemData};

pub type Mat = Vec<Vec<f64>>;

pub struct Dense {
    pub n: usize,
    pub nodes: Vec<[f64; 2]>,
    pub interior: Vec<usize>,
    pub triangles: Vec<[usize; 3]>,
    pub mass: Mat,
    pub lumped: Vec<f64>,
}

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(r, c);
    for i in 0..r {
        for l in 0..k {
            let ail = a[i][l];
            if ail != 0.0 {
                for j in 0..c {
                    out[i][j] += ail * b[l][j];
                }
            }
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    let mut t = zeros(a[0].len(), a.len());
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j][i] = *v;
        }
    }
    t
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &Mat, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Mat = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[i][k].abs().partial_cmp(&m[j][k].abs()).unwrap())
            .unwrap();
        m.swap(k, p);
        x.swap(k, p);
        assert!(m[k][k].abs() > 1e-300, "singular dense system");
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            if f != 0.0 {
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                x[i] -= f * x[k];
            }
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[k][j] * x[j]).sum();
        x[k] = (x[k] - s) / m[k][k];
    }
    x
}

impl Dense {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.n_cells_per_side();
        let nodes = mesh.nodes().to_vec();
        let h = 1.0 / n as f64;
        let index = |i: usize, j: usize| -> usize {
            nodes
                .iter()
                .position(|p| (p[0] - i as f64 * h).abs() < 1e-12 && (p[1] - j as f64 * h).abs() < 1e-12)
                .expect("grid node exists")
        };
        let mut triangles = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let (ll, lr, ul, ur) = (index(i, j), index(i + 1, j), index(i, j + 1), index(i + 1, j + 1));
                triangles.push([ll, lr, ur]);
                triangles.push([ll, ur, ul]);
            }
        }
        let interior: Vec<usize> = (0..nodes.len())
            .filter(|&k| {
                let [x, y] = nodes[k];
                x > 1e-12 && x < 1.0 - 1e-12 && y > 1e-12 && y < 1.0 - 1e-12
            })
            .collect();
        let nn = nodes.len();
        let mut mass = zeros(nn, nn);
        let mut lumped = vec![0.0; nn];
        for t in &triangles {
            let area = area(&nodes, t);
            for a in 0..3 {
                lumped[t[a]] += area / 3.0;
                for b in 0..3 {
                    mass[t[a]][t[b]] += area / 12.0 * if a == b { 2.0 } else { 1.0 };
                }
            }
        }
        Self {
            n,
            nodes,
            interior,
            triangles,
            mass,
            lumped,
        }
    }

    /// Full-node matrix of `int A grad(phi_j).grad(phi_i) + b.grad(phi_j) phi_i`.
    pub fn operator(&self, a: [[f64; 2]; 2], b: [f64; 2]) -> Mat {
        let nn = self.nodes.len();
        let mut k = zeros(nn, nn);
        for t in &self.triangles {
            let area = area(&self.nodes, t);
            let g = gradients(&self.nodes, t);
            for i in 0..3 {
                for j in 0..3 {
                    let agj = [
                        a[0][0] * g[j][0] + a[0][1] * g[j][1],
                        a[1][0] * g[j][0] + a[1][1] * g[j][1],
                    ];
                    let diff = area * (agj[0] * g[i][0] + agj[1] * g[i][1]);
                    let conv = area / 3.0 * (b[0] * g[j][0] + b[1] * g[j][1]);
                    k[t[i]][t[j]] += diff + conv;
                }
            }
        }
        k
    }

    pub fn restrict(&self, full: &Mat) -> Mat {
        self.interior
            .iter()
            .map(|&i| self.interior.iter().map(|&j| full[i][j]).collect())
            .collect()
    }

    pub fn extend(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.nodes.len()];
        for (s, &k) in self.interior.iter().enumerate() {
            full[k] = interior[s];
        }
        full
    }

    /// Interior operator with lumped reaction `diag(m_i a_i)`.
    pub fn interior_operator(&self, a: [[f64; 2]; 2], b: [f64; 2], reaction: &[f64]) -> Mat {
        let mut k = self.restrict(&self.operator(a, b));
        for (s, &node) in self.interior.iter().enumerate() {
            k[s][s] += self.lumped[node] * reaction[node];
        }
        k
    }

    /// Interior load `(M h)_I`.
    pub fn load(&self, h: &[f64]) -> Vec<f64> {
        let mh = matvec(&self.mass, h);
        self.interior.iter().map(|&k| mh[k]).collect()
    }

    pub fn solve_linear(&self, a: [[f64; 2]; 2], b: [f64; 2], reaction: &[f64], h: &[f64]) -> Vec<f64> {
        self.extend(&solve(&self.interior_operator(a, b, reaction), &self.load(h)))
    }

    /// `S` with `y = S u` for `f = c1 y`.
    pub fn control_to_state(&self, a: [[f64; 2]; 2], b: [f64; 2], c1: &[f64]) -> Mat {
        let nn = self.nodes.len();
        let mut s = zeros(nn, nn);
        for j in 0..nn {
            let mut e = vec![0.0; nn];
            e[j] = 1.0;
            let col = self.solve_linear(a, b, c1, &e);
            for i in 0..nn {
                s[i][j] = col[i];
            }
        }
        s
    }

    /// Newton for `K y + M_L (c0 + c1 y + c3 y^3) = (M u)_I`.
    pub fn solve_cubic(
        &self,
        a: [[f64; 2]; 2],
        b: [f64; 2],
        c: [&[f64]; 3],
        u: &[f64],
    ) -> Vec<f64> {
        let [c0, c1, c3] = c;
        let k = self.restrict(&self.operator(a, b));
        let rhs = self.load(u);
        let mut y = vec![0.0; self.interior.len()];
        for _ in 0..60 {
            let ky = matvec(&k, &y);
            let mut r = vec![0.0; y.len()];
            let mut jac = k.clone();
            for (s, &node) in self.interior.iter().enumerate() {
                let m = self.lumped[node];
                r[s] = ky[s] + m * (c0[node] + c1[node] * y[s] + c3[node] * y[s].powi(3)) - rhs[s];
                jac[s][s] += m * (c1[node] + 3.0 * c3[node] * y[s] * y[s]);
            }
            if r.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-14 {
                break;
            }
            let d = solve(&jac, &r);
            for (ys, ds) in y.iter_mut().zip(&d) {
                *ys -= ds;
            }
        }
        self.extend(&y)
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(u, &matvec(&self.mass, v))
    }

    pub fn l2(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }
}

fn area(nodes: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let [p, q, r] = [nodes[t[0]], nodes[t[1]], nodes[t[2]]];
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1])).abs()
}

fn gradients(nodes: &[[f64; 2]], t: &[usize; 3]) -> [[f64; 2]; 3] {
    let [p, q, r] = [nodes[t[0]], nodes[t[1]], nodes[t[2]]];
    let det = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
    [
        [(q[1] - r[1]) / det, (r[0] - q[0]) / det],
        [(r[1] - p[1]) / det, (p[0] - r[0]) / det],
        [(p[1] - q[1]) / det, (q[0] - p[0]) / det],
    ]
}

/// Box-constrained strictly convex QP `min 1/2 u'Hu + c'u` over
/// `lo <= u <= hi`, by primal-dual active sets. Panics unless the KKT
/// conditions hold to `1e-10` relative at the end.
pub fn box_qp(h: &Mat, c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = c.len();
    let mut u = vec![0.5 * (lo + hi); n];
    let mut lambda = vec![0.0; n];
    let mut last: Option<Vec<i8>> = None;
    for _ in 0..200 {
        let state: Vec<i8> = (0..n)
            .map(|i| {
                let t = u[i] - lambda[i];
                if t < lo {
                    -1
                } else if t > hi {
                    1
                } else {
                    0
                }
            })
            .collect();
        if last.as_ref() == Some(&state) {
            break;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        for i in 0..n {
            u[i] = match state[i] {
                -1 => lo,
                1 => hi,
                _ => u[i],
            };
        }
        if !free.is_empty() {
            let hff: Mat = free.iter().map(|&i| free.iter().map(|&j| h[i][j]).collect()).collect();
            let rhs: Vec<f64> = free
                .iter()
                .map(|&i| {
                    -c[i]
                        - (0..n)
                            .filter(|&j| state[j] != 0)
                            .map(|j| h[i][j] * u[j])
                            .sum::<f64>()
                })
                .collect();
            let uf = solve(&hff, &rhs);
            for (k, &i) in free.iter().enumerate() {
                u[i] = uf[k];
            }
        }
        // Gradient of the objective; zero on free nodes.
        let grad: Vec<f64> = matvec(h, &u).iter().zip(c).map(|(a, b)| a + b).collect();
        for i in 0..n {
            lambda[i] = if state[i] == 0 { 0.0 } else { grad[i] };
        }
        last = Some(state);
    }
    let grad: Vec<f64> = matvec(h, &u).iter().zip(c).map(|(a, b)| a + b).collect();
    let scale = 1.0 + grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for i in 0..n {
        assert!(u[i] >= lo - 1e-12 && u[i] <= hi + 1e-12);
        let tol = 1e-10 * scale;
        if u[i] <= lo + 1e-14 {
            assert!(grad[i] >= -tol, "lower KKT at {i}: {}", grad[i]);
        } else if u[i] >= hi - 1e-14 {
            assert!(grad[i] <= tol, "upper KKT at {i}: {}", grad[i]);
        } else {
            assert!(grad[i].abs() <= tol, "free KKT at {i}: {}", grad[i]);
        }
    }
    u
}

/// Largest eigenvalue of `M^{-1} B` for symmetric `B >= 0` and SPD `M`.
pub fn max_generalized_eigenvalue(b: &Mat, m: &Mat) -> f64 {
    let n = b.len();
    let mut x = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let y = solve(m, &matvec(b, &x));
        let norm = dot(&y, &matvec(m, &y)).sqrt();
        let next = dot(&x, &matvec(b, &x)) / dot(&x, &matvec(m, &x));
        x = y.iter().map(|v| v / norm).collect();
        if (next - lambda).abs() <= 1e-13 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Data of the quadratic instance `f = c1 y` as the dense QP
/// `J(u) = 1/2 u'Hu + c'u + const`.
pub struct Quadratic {
    pub h: Mat,
    pub c: Vec<f64>,
    pub s: Mat,
}

pub fn quadratic(
    dense: &Dense,
    a: [[f64; 2]; 2],
    b: [f64; 2],
    c1: &[f64],
    y_d: &[f64],
    g: &[f64],
    tikhonov: f64,
) -> Quadratic {
    let s = dense.control_to_state(a, b, c1);
    let st = transpose(&s);
    let sms = matmul(&st, &matmul(&dense.mass, &s));
    let h: Mat = sms
        .iter()
        .zip(&dense.mass)
        .map(|(r1, r2)| r1.iter().zip(r2).map(|(p, q)| p + tikhonov * q).collect())
        .collect();
    let my_d = matvec(&dense.mass, y_d);
    let mg = matvec(&dense.mass, g);
    let c: Vec<f64> = matvec(&st, &my_d).iter().zip(&mg).map(|(p, q)| q - p).collect();
    Quadratic { h, c, s }
}

pub fn field(mesh: &Mesh, values: Vec<f64>) -> NodalField {
    mesh.field(values).unwrap()
}

/// Linear instance with constant coefficients.
pub fn linear_problem(
    n: usize,
    a: f64,
    b: [f64; 2],
    c1: f64,
    y_d: impl Fn(f64, f64) -> f64,
    g: impl Fn(f64, f64) -> f64,
    bounds: (f64, f64),
) -> ProblemData {
    let mesh = Mesh::new(n).unwrap();
    let coeffs = CoefficientSet::uniform(
        &mesh,
        [[a, 0.0], [0.0, a]],
        b,
        mesh.zeros(),
        mesh.constant(c1),
        mesh.zeros(),
    )
    .unwrap();
    let y_d = mesh.interpolate(y_d).unwrap();
    let g = mesh.interpolate(g).unwrap();
    ProblemData::new(mesh, coeffs, y_d, g, bounds.0, bounds.1).unwrap()
}

/// Convection-diffusion instance with cubic reaction used across the
/// stability checks.
pub fn cubic_problem(n: usize) -> ProblemData {
    cubic_problem_with_bounds(n, 0.0, 1.0)
}

pub fn cubic_problem_with_bounds(n: usize, ua: f64, ub: f64) -> ProblemData {
    let mesh = Mesh::new(n).unwrap();
    let coeffs = CoefficientSet::uniform(
        &mesh,
        [[0.05, 0.0], [0.0, 0.05]],
        [0.5, 0.2],
        mesh.zeros(),
        mesh.constant(0.5),
        mesh.constant(1.0),
    )
    .unwrap();
    let y_d = mesh
        .interpolate(|x, y| 2.0 * (x - 0.5) + 0.5 * (y - 0.5))
        .unwrap();
    ProblemData::new(mesh.clone(), coeffs, y_d, mesh.zeros(), ua, ub).unwrap()
}

/// Random combination of low Fourier modes with values in `[-1, 1]`.
pub fn smooth_random(mesh: &Mesh, rng: &mut impl rand::Rng) -> NodalField {
    let pi = std::f64::consts::PI;
    let modes: Vec<(f64, f64, f64, f64)> = (0..9)
        .map(|m| {
            (
                (m / 3 + 1) as f64,
                (m % 3 + 1) as f64,
                rng.random_range(0.0..2.0 * pi),
                rng.random_range(-1.0..=1.0) / 9.0,
            )
        })
        .collect();
    mesh.interpolate(|x, y| {
        modes
            .iter()
            .map(|&(p, q, phase, c)| c * (p * pi * x + phase).cos() * (q * pi * y).cos())
            .sum()
    })
    .unwrap()
}
