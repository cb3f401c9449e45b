//! P1 assembly of the state operator, mass matrices and load vectors.
//!
//! Row/column convention: `K[i][j] = a(phi_j, phi_i)` with `j` the trial and
//! `i` the test index, so state solves use `K` and adjoint solves `K^T`.

use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientSet;
use crate::geometry::{orient, Point};
use crate::mesh::TriMesh;
use crate::quadrature::{gauss_legendre, CornerRefinement, ElementQuadrature, QuadPoint};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyOptions {
    /// Polynomial degree of the triangle rule (1, 2, 4, 5 or 8).
    pub degree: usize,
    /// Gauss points per boundary edge.
    pub edge_points: usize,
    pub corner: CornerRefinement,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { degree: 4, edge_points: 4, corner: CornerRefinement::default() }
    }
}

impl AssemblyOptions {
    pub fn quadrature(&self, singular_points: &[Point]) -> ElementQuadrature {
        ElementQuadrature::new(self.degree, self.corner, singular_points.to_vec())
    }
}

/// Maps piecewise-constant boundary functions (one value per boundary edge)
/// to nodal functionals `int_E u phi_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMass {
    n: usize,
    edges: Vec<[usize; 2]>,
    lengths: Vec<f64>,
}

impl BoundaryMass {
    pub fn new(mesh: &TriMesh) -> Self {
        BoundaryMass {
            n: mesh.num_nodes(),
            edges: mesh.boundary_edges.iter().map(|e| e.nodes).collect(),
            lengths: mesh.boundary_edges.iter().map(|e| e.length).collect(),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Edge-lumped control metric: the edge lengths `h_E`.
    pub fn lumped(&self) -> &[f64] {
        &self.lengths
    }

    /// Nodal vector `int_Gamma u phi_i` for edgewise constant `u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.edges.len());
        let mut out = vec![0.0; self.n];
        for ((e, h), ue) in self.edges.iter().zip(&self.lengths).zip(u) {
            out[e[0]] += 0.5 * h * ue;
            out[e[1]] += 0.5 * h * ue;
        }
        out
    }

    /// Per-edge integrals `int_E v_h` of a nodal P1 function.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        self.edges.iter().zip(&self.lengths).map(|(e, h)| 0.5 * h * (v[e[0]] + v[e[1]])).collect()
    }

    /// Per-edge means `(1/h_E) int_E v_h`.
    pub fn edge_means(&self, v: &[f64]) -> Vec<f64> {
        self.edges.iter().map(|e| 0.5 * (v[e[0]] + v[e[1]])).collect()
    }

    /// `n x m` matrix form of [`BoundaryMass::apply`].
    pub fn to_matrix(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(2 * self.edges.len());
        for (k, (e, h)) in self.edges.iter().zip(&self.lengths).enumerate() {
            t.push((e[0], k, 0.5 * h));
            t.push((e[1], k, 0.5 * h));
        }
        CsrMatrix::from_triplets(self.n, self.edges.len(), &t)
    }
}

#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub k: CsrMatrix,
    pub m_omega: CsrMatrix,
    pub m_gamma: BoundaryMass,
    /// `int_Omega f phi_i`
    pub load_f: Vec<f64>,
    /// `int_Gamma g phi_i`
    pub load_g: Vec<f64>,
    pub n: usize,
}

/// Gradients of the barycentric coordinates of a triangle and its area.
pub fn p1_gradients(tri: &[Point; 3]) -> ([Point; 3], f64) {
    let area2 = orient(tri[0], tri[1], tri[2]);
    let mut g = [Point::ORIGIN; 3];
    for (i, gi) in g.iter_mut().enumerate() {
        let (p, q) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
        *gi = (1.0 / area2) * Point::new(p.y - q.y, q.x - p.x);
    }
    (g, 0.5 * area2.abs())
}

/// Gauss rule on the segment `a`-`b`: `(point, parameter t in [0,1], weight)`
/// with weights summing to the segment length.
pub fn edge_quadrature(a: Point, b: Point, n: usize) -> Vec<(Point, f64, f64)> {
    let (t, w) = gauss_legendre(n);
    let len = a.dist(b);
    t.iter().zip(&w).map(|(&t, &w)| (a + t * (b - a), t, w * len)).collect()
}

pub(crate) fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Send + Sync) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Scatters element matrices in element order, so the sum is independent of
/// how the element loop was scheduled.
fn scatter(mesh: &TriMesh, locals: &[[[f64; 3]; 3]]) -> CsrMatrix {
    let mut t = Vec::with_capacity(9 * locals.len());
    for (tri, loc) in mesh.triangles.iter().zip(locals) {
        for i in 0..3 {
            for j in 0..3 {
                t.push((tri[i], tri[j], loc[i][j]));
            }
        }
    }
    let n = mesh.num_nodes();
    CsrMatrix::from_triplets(n, n, &t)
}

fn element_state(tri: &[Point; 3], coeffs: &CoefficientSet, pts: &[QuadPoint]) -> [[f64; 3]; 3] {
    let (g, _) = p1_gradients(tri);
    let mut loc = [[0.0; 3]; 3];
    for q in pts {
        let a = (coeffs.a)(q.x);
        let b = (coeffs.b)(q.x);
        let a0 = (coeffs.a0)(q.x);
        for j in 0..3 {
            let ag = a.apply(g[j]);
            let bg = b.dot(g[j]);
            for i in 0..3 {
                loc[i][j] += q.weight * (ag.dot(g[i]) + bg * q.bary[i] + a0 * q.bary[j] * q.bary[i]);
            }
        }
    }
    loc
}

/// State stiffness `K[i][j] = a(phi_j, phi_i)`.
pub fn assemble_operator(mesh: &TriMesh, coeffs: &CoefficientSet, opts: &AssemblyOptions) -> CsrMatrix {
    let quad = opts.quadrature(&coeffs.singular_points);
    let locals = map_indexed(mesh.num_triangles(), |t| {
        let tri = mesh.triangle_points(t);
        element_state(&tri, coeffs, &quad.points(tri))
    });
    scatter(mesh, &locals)
}

/// Exact P1 mass matrix `int phi_i phi_j`.
pub fn assemble_mass(mesh: &TriMesh) -> CsrMatrix {
    let locals: Vec<_> = (0..mesh.num_triangles())
        .map(|t| {
            let a = mesh.area(t) / 12.0;
            let mut loc = [[a; 3]; 3];
            for (i, row) in loc.iter_mut().enumerate() {
                row[i] = 2.0 * a;
            }
            loc
        })
        .collect();
    scatter(mesh, &locals)
}

/// Laplace stiffness plus mass: the discrete `H^1` inner product.
pub fn assemble_h1_metric(mesh: &TriMesh) -> CsrMatrix {
    let locals: Vec<_> = (0..mesh.num_triangles())
        .map(|t| {
            let tri = mesh.triangle_points(t);
            let (g, area) = p1_gradients(&tri);
            let mut loc = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    loc[i][j] = area * (g[i].dot(g[j]) + if i == j { 1.0 / 6.0 } else { 1.0 / 12.0 });
                }
            }
            loc
        })
        .collect();
    scatter(mesh, &locals)
}

/// `int_Omega f phi_i`.
pub fn load_domain(mesh: &TriMesh, f: &(dyn Fn(Point) -> f64 + Sync), quad: &ElementQuadrature) -> Vec<f64> {
    let locals = map_indexed(mesh.num_triangles(), |t| {
        let tri = mesh.triangle_points(t);
        let mut loc = [0.0; 3];
        for q in quad.points(tri) {
            let v = f(q.x);
            for (l, b) in loc.iter_mut().zip(q.bary) {
                *l += q.weight * v * b;
            }
        }
        loc
    });
    let mut out = vec![0.0; mesh.num_nodes()];
    for (tri, loc) in mesh.triangles.iter().zip(&locals) {
        for k in 0..3 {
            out[tri[k]] += loc[k];
        }
    }
    out
}

/// `int_Gamma g(x, n) phi_i` with `n` the outward unit normal.
pub fn load_boundary(mesh: &TriMesh, g: &(dyn Fn(Point, Point) -> f64 + Sync), points: usize) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_nodes()];
    for e in &mesh.boundary_edges {
        let [i, j] = e.nodes;
        let n = mesh.edge_normal(e);
        for (x, t, w) in edge_quadrature(mesh.nodes[i], mesh.nodes[j], points) {
            let v = g(x, n);
            out[i] += w * v * (1.0 - t);
            out[j] += w * v * t;
        }
    }
    out
}

/// Operator, mass matrices and the loads from `coeffs.f` and `coeffs.g`.
pub fn assemble_state(mesh: &TriMesh, coeffs: &CoefficientSet, opts: &AssemblyOptions) -> AssembledSystem {
    let quad = opts.quadrature(&coeffs.singular_points);
    AssembledSystem {
        k: assemble_operator(mesh, coeffs, opts),
        m_omega: assemble_mass(mesh),
        m_gamma: BoundaryMass::new(mesh),
        load_f: load_domain(mesh, &*coeffs.f, &quad),
        load_g: load_boundary(mesh, &*coeffs.g, opts.edge_points),
        n: mesh.num_nodes(),
    }
}

/// The adjoint form written after integration by parts,
/// `D[i][j] = int a grad phi_i . grad phi_j - phi_i phi_j div b - phi_i b . grad phi_j
///  + a0 phi_i phi_j + int_Gamma phi_i phi_j b . n`.
/// Agrees with `K^T` up to quadrature error; only used to validate `K`.
pub fn assemble_adjoint_direct(mesh: &TriMesh, coeffs: &CoefficientSet, opts: &AssemblyOptions) -> CsrMatrix {
    let quad = opts.quadrature(&coeffs.singular_points);
    let locals = map_indexed(mesh.num_triangles(), |t| {
        let tri = mesh.triangle_points(t);
        let (g, _) = p1_gradients(&tri);
        let mut loc = [[0.0; 3]; 3];
        for q in quad.points(tri) {
            let a = (coeffs.a)(q.x);
            let b = (coeffs.b)(q.x);
            let c = (coeffs.a0)(q.x) - (coeffs.div_b)(q.x);
            for i in 0..3 {
                let ag = a.apply(g[i]);
                for j in 0..3 {
                    loc[i][j] += q.weight
                        * (ag.dot(g[j]) - q.bary[i] * b.dot(g[j]) + c * q.bary[i] * q.bary[j]);
                }
            }
        }
        loc
    });
    let d = scatter(mesh, &locals);
    let mut t = Vec::new();
    for e in &mesh.boundary_edges {
        let n = mesh.edge_normal(e);
        let [i, j] = e.nodes;
        let mut loc = [[0.0; 2]; 2];
        for (x, s, w) in edge_quadrature(mesh.nodes[i], mesh.nodes[j], opts.edge_points) {
            let bn = (coeffs.b_dot_n)(x, n);
            let phi = [1.0 - s, s];
            for a in 0..2 {
                for c in 0..2 {
                    loc[a][c] += w * bn * phi[a] * phi[c];
                }
            }
        }
        for a in 0..2 {
            for c in 0..2 {
                t.push((e.nodes[a], e.nodes[c], loc[a][c]));
            }
        }
    }
    let bd = CsrMatrix::from_triplets(d.nrows(), d.ncols(), &t);
    d.add_scaled(1.0, &bd, 1.0)
}
