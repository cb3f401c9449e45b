//! Error norms against exact fields, convergence orders, the coercivity probe
//! and the convergence study driver.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_h1_metric, assemble_state, edge_quadrature, load_boundary, load_domain, map_indexed, p1_gradients,
    AssemblyOptions,
};
use crate::coeffs::{make_example, ExactField, ManufacturedCase};
use crate::domain::PolygonDomain;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::mesh::{build_mesh_hierarchy, GradingSpec, TriMesh};
use crate::ocp::{Bounds, OcpData, OcpOptions, OcpProblem};
use crate::quadrature::ElementQuadrature;
use crate::solver::{Cholesky, Factorization, LinearSolveConfig, SolverError};
use crate::sparse::{axpy, dot, norm2, CsrMatrix};

fn element_sum(mesh: &TriMesh, f: impl Fn(usize) -> f64 + Send + Sync) -> f64 {
    // element order is fixed, so the sum is reproducible
    map_indexed(mesh.num_triangles(), f).iter().sum()
}

/// `||v_h - v||_{L^2(Omega)}` for a nodal P1 field `v_h`.
pub fn error_l2_domain(
    mesh: &TriMesh,
    nodal: &[f64],
    exact: &(dyn Fn(Point) -> f64 + Sync),
    quad: &ElementQuadrature,
) -> f64 {
    assert_eq!(nodal.len(), mesh.num_nodes());
    element_sum(mesh, |t| {
        let tri = mesh.triangles[t];
        quad.points(mesh.triangle_points(t))
            .iter()
            .map(|q| {
                let vh: f64 = (0..3).map(|k| q.bary[k] * nodal[tri[k]]).sum();
                q.weight * (vh - exact(q.x)).powi(2)
            })
            .sum()
    })
    .sqrt()
}

/// Full `H^1(Omega)` norm of `v_h - v`.
pub fn error_h1_domain(mesh: &TriMesh, nodal: &[f64], exact: &ExactField, quad: &ElementQuadrature) -> f64 {
    assert_eq!(nodal.len(), mesh.num_nodes());
    element_sum(mesh, |t| {
        let tri = mesh.triangles[t];
        let pts = mesh.triangle_points(t);
        let (g, _) = p1_gradients(&pts);
        let grad_h = (0..3).fold(Point::ORIGIN, |acc, k| acc + nodal[tri[k]] * g[k]);
        quad.points(pts)
            .iter()
            .map(|q| {
                let vh: f64 = (0..3).map(|k| q.bary[k] * nodal[tri[k]]).sum();
                let dg = grad_h - (exact.gradient)(q.x);
                q.weight * ((vh - (exact.value)(q.x)).powi(2) + dg.dot(dg))
            })
            .sum()
    })
    .sqrt()
}

/// `||u_h - u||_{L^2(Gamma)}` for an edgewise constant `u_h`.
pub fn error_l2_boundary(mesh: &TriMesh, control: &[f64], exact: &(dyn Fn(Point) -> f64 + Sync), points: usize) -> f64 {
    assert_eq!(control.len(), mesh.boundary_edges.len());
    mesh.boundary_edges
        .iter()
        .zip(control)
        .map(|(e, &ue)| {
            edge_quadrature(mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]], points)
                .iter()
                .map(|&(x, _, w)| w * (ue - exact(x)).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Result of [`coercivity_probe`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoercivityReport {
    /// Smallest generalized eigenvalue of `(K + K^T)/2` against the `H^1` metric.
    pub lambda_min: f64,
    /// Eigen-residual `|S x - lambda M x| / |M x|` of the returned pair.
    pub residual: f64,
    /// Whether `(K + K^T)/2` admitted a Cholesky factorization; this
    /// certifies the sign of `lambda_min` independently of the iteration.
    pub symmetric_part_definite: bool,
    pub iterations: usize,
}

impl CoercivityReport {
    pub fn verdict(&self) -> &'static str {
        if self.lambda_min < 0.0 && !self.symmetric_part_definite {
            "NON-COERCIVE (lambda_min < 0)"
        } else if self.lambda_min > 0.0 && self.symmetric_part_definite {
            "coercive (lambda_min > 0)"
        } else {
            "indeterminate"
        }
    }
}

/// Smallest eigenvalue of `S x = lambda M x` with `S = (K + K^T)/2`.
///
/// A shift `sigma` lies below the spectrum exactly when `S - sigma M` has a
/// Cholesky factorization. Bisection on that test brackets `lambda_min`
/// tightly; shifted inverse iteration from just below then converges in a
/// few steps and yields the eigenpair.
pub fn coercivity_probe(k: &CsrMatrix, m_h1: &CsrMatrix) -> Result<CoercivityReport> {
    let s = k.symmetric_part();
    let n = s.nrows();
    if m_h1.nrows() != n || k.ncols() != n {
        return Err(Error::InvalidParameter("coercivity probe: dimension mismatch".into()));
    }
    let shifted = |sigma: f64| Cholesky::new(&s.add_scaled(1.0, m_h1, -sigma));
    let definite = |sigma: f64| -> Result<bool> {
        match shifted(sigma) {
            Ok(_) => Ok(true),
            Err(SolverError::NotPositiveDefinite) => Ok(false),
            Err(e) => Err(e.into()),
        }
    };
    let symmetric_part_definite = definite(0.0)?;

    let mut lo = -1.0;
    let mut steps = 0;
    while !definite(lo)? {
        lo *= 2.0;
        steps += 1;
        if steps > 200 {
            return Err(Error::NoConvergence { method: "shift search", iterations: steps, residual: lo, history: vec![] });
        }
    }
    // any Rayleigh quotient bounds lambda_min from above
    let rayleigh = |x: &[f64]| dot(x, &s.matvec(x)) / dot(x, &m_h1.matvec(x));
    let mut hi = (0..n)
        .map(|i| s.get(i, i) / m_h1.get(i, i))
        .fold(f64::INFINITY, f64::min);
    let mut history = Vec::new();
    while hi - lo > 1e-6 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if definite(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
        history.push(hi - lo);
    }
    let chol = shifted(lo)?;
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let mut residual = f64::INFINITY;
    for it in 0..500 {
        let mx = m_h1.matvec(&x);
        let mut y = chol.solve(&mx);
        let scale = dot(&y, &m_h1.matvec(&y)).sqrt();
        y.iter_mut().for_each(|v| *v /= scale);
        x = y;
        let lambda = rayleigh(&x);
        let sx = s.matvec(&x);
        let mx = m_h1.matvec(&x);
        let r: Vec<f64> = sx.iter().zip(&mx).map(|(a, b)| a - lambda * b).collect();
        residual = norm2(&r) / norm2(&mx);
        history.push(residual);
        if residual < 1e-10 {
            return Ok(CoercivityReport { lambda_min: lambda, residual, symmetric_part_definite, iterations: steps + it + 1 });
        }
    }
    Err(Error::NoConvergence { method: "inverse iteration", iterations: 500, residual, history })
}

/// Discrete `H^1` metric used by the probe.
pub fn h1_metric(mesh: &TriMesh) -> CsrMatrix {
    assemble_h1_metric(mesh)
}

/// One row of a convergence table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub level: usize,
    pub h_nominal: f64,
    pub ndof: usize,
    pub err_y_l2: f64,
    pub err_y_h1: f64,
    pub err_phi_l2: f64,
    pub err_phi_h1: f64,
    pub err_u_l2_gamma: f64,
}

impl ErrorRecord {
    pub fn errors(&self) -> [f64; 5] {
        [self.err_y_l2, self.err_y_h1, self.err_phi_l2, self.err_phi_h1, self.err_u_l2_gamma]
    }
}

pub const COLUMN_NAMES: [&str; 5] = ["y_L2", "y_H1", "phi_L2", "phi_H1", "u_L2G"];

/// `log2(e_prev / e_next)`.
pub fn eoc(prev: f64, next: f64) -> f64 {
    (prev / next).log2()
}

/// Convergence orders expected for grading `mu` at a corner with singular
/// exponent `lambda`, in [`COLUMN_NAMES`] order.
pub fn expected_orders(mu: f64, lambda: f64) -> [f64; 5] {
    let s = (lambda / mu).min(1.0);
    let s_u = (1.5 * lambda / mu).min(1.0);
    [2.0 * s, s, 2.0 * s, s, s_u]
}

/// [`expected_orders`] for the worst corner of `domain`.
pub fn expected_orders_for(domain: &PolygonDomain) -> [f64; 5] {
    domain
        .corners()
        .iter()
        .map(|c| expected_orders(c.mu, c.lambda))
        .fold([f64::INFINITY; 5], |acc, e| std::array::from_fn(|i| acc[i].min(e[i])))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EocTable {
    pub records: Vec<ErrorRecord>,
    /// `eocs[j]` compares record `j` with record `j - 1`; `None` for the first row.
    pub eocs: Vec<Option<[f64; 5]>>,
    pub expected: Option<[f64; 5]>,
}

impl EocTable {
    pub fn new(records: Vec<ErrorRecord>, expected: Option<[f64; 5]>) -> Self {
        let eocs = (0..records.len())
            .map(|j| {
                (j > 0).then(|| {
                    let (p, q) = (records[j - 1].errors(), records[j].errors());
                    std::array::from_fn(|c| eoc(p[c], q[c]))
                })
            })
            .collect();
        EocTable { records, eocs, expected }
    }

    /// Mean EOC per column over the last `pairs` level pairs.
    pub fn final_eoc(&self, pairs: usize) -> Option<[f64; 5]> {
        let rows: Vec<[f64; 5]> = self.eocs.iter().flatten().copied().collect();
        if rows.len() < pairs || pairs == 0 {
            return None;
        }
        let tail = &rows[rows.len() - pairs..];
        Some(std::array::from_fn(|c| tail.iter().map(|r| r[c]).sum::<f64>() / pairs as f64))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "level,h,ndof,err_y_L2,eoc_y_L2,err_y_H1,eoc_y_H1,err_phi_L2,eoc_phi_L2,err_phi_H1,eoc_phi_H1,err_u_L2G,eoc_u_L2G"
        )?;
        for (r, e) in self.records.iter().zip(&self.eocs) {
            write!(w, "{},{:.17e},{}", r.level, r.h_nominal, r.ndof)?;
            for (c, err) in r.errors().iter().enumerate() {
                match e {
                    Some(e) => write!(w, ",{err:.17e},{:.17e}", e[c])?,
                    None => write!(w, ",{err:.17e},")?,
                }
            }
            writeln!(w)?;
        }
        if let Some(x) = self.expected {
            writeln!(
                w,
                "# expected,,,,{},,{},,{},,{},,{}",
                x[0], x[1], x[2], x[3], x[4]
            )?;
        }
        Ok(())
    }

    /// Console table with errors in `1.20e-01` style.
    pub fn render(&self) -> String {
        let mut s = format!("{:>5} {:>9} {:>8}", "level", "h", "ndof");
        for name in COLUMN_NAMES {
            s.push_str(&format!(" {:>10} {:>5}", format!("err_{name}"), "EOC"));
        }
        s.push('\n');
        for (r, e) in self.records.iter().zip(&self.eocs) {
            s.push_str(&format!("{:>5} {:>9} {:>8}", r.level, sci(r.h_nominal), r.ndof));
            for (c, err) in r.errors().iter().enumerate() {
                let eo = e.map(|e| format!("{:.2}", e[c])).unwrap_or_default();
                s.push_str(&format!(" {:>10} {:>5}", sci(*err), eo));
            }
            s.push('\n');
        }
        if let Some(x) = self.expected {
            s.push_str(&format!("{:>24}", "expected"));
            for v in x {
                s.push_str(&format!(" {:>10} {:>5}", "", format!("{v:.2}")));
            }
            s.push('\n');
        }
        s
    }
}

/// Grading parameter: one value for every corner with `lambda < 1`, or one
/// value per corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuSpec {
    Singular(f64),
    PerCorner(Vec<f64>),
}

impl Default for MuSpec {
    fn default() -> Self {
        MuSpec::Singular(1.0)
    }
}

impl MuSpec {
    pub fn apply(&self, domain: &mut PolygonDomain) -> Result<()> {
        match self {
            MuSpec::Singular(mu) => domain.set_grading_singular(*mu),
            MuSpec::PerCorner(list) => domain.set_grading(list),
        }
    }
}

/// Settings of a convergence study on the manufactured L-shape example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub mu: MuSpec,
    pub level_min: usize,
    pub level_max: usize,
    pub delta: f64,
    pub alpha: f64,
    pub nu: f64,
    pub bounds: Bounds,
    pub grading_radius: f64,
    pub c_g: f64,
    pub h0: Option<f64>,
    pub assembly: AssemblyOptions,
    pub solver: LinearSolveConfig,
    pub ocp: OcpOptions,
    /// Solve the levels concurrently; results do not depend on this.
    pub parallel_levels: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            mu: MuSpec::default(),
            level_min: 1,
            level_max: 7,
            delta: 6.0,
            alpha: -1.25,
            nu: 1.0,
            bounds: Bounds::NONE,
            grading_radius: 0.5,
            c_g: 1.0,
            h0: None,
            assembly: AssemblyOptions::default(),
            solver: LinearSolveConfig::default(),
            ocp: OcpOptions::default(),
            parallel_levels: true,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.level_min < 1 || self.level_max < self.level_min {
            return Err(Error::InvalidParameter(format!(
                "levels {}..{} must satisfy 1 <= min <= max",
                self.level_min, self.level_max
            )));
        }
        make_example(self.delta, self.alpha, self.nu)?;
        Bounds::new(self.bounds.u_min, self.bounds.u_max)?;
        if !(self.solver.tol > 0.0) || !(self.ocp.opt_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if !matches!(self.assembly.degree, 1 | 2 | 4 | 5 | 8) {
            return Err(Error::InvalidParameter(format!(
                "quadrature degree {} is not tabulated (1, 2, 4, 5, 8)",
                self.assembly.degree
            )));
        }
        let mut d = PolygonDomain::preset("lshape")?;
        self.mu.apply(&mut d)?;
        self.grading(&d).validate(d.num_sides())
    }

    pub fn case(&self) -> Result<ManufacturedCase> {
        make_example(self.delta, self.alpha, self.nu)
    }

    /// The L-shape with this study's grading applied.
    pub fn domain(&self) -> Result<PolygonDomain> {
        let mut d = PolygonDomain::preset("lshape")?;
        self.mu.apply(&mut d)?;
        Ok(d)
    }

    pub fn grading(&self, domain: &PolygonDomain) -> GradingSpec {
        let mut g = GradingSpec::from_domain(domain);
        g.radius = vec![self.grading_radius; g.mu.len()];
        g.c_g = self.c_g;
        g.h0 = self.h0;
        g
    }

    pub fn meshes(&self) -> Result<Vec<TriMesh>> {
        let d = self.domain()?;
        let mut all = build_mesh_hierarchy(&d, self.level_max, &self.grading(&d))?;
        all.drain(..self.level_min - 1);
        Ok(all)
    }
}

/// Discrete state with the exact control as datum and discrete adjoint with
/// the exact state in the source, with their errors.
#[derive(Clone, Debug)]
pub struct BvpResult {
    pub state: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub err_y_l2: f64,
    pub err_y_h1: f64,
    pub err_phi_l2: f64,
    pub err_phi_h1: f64,
}

pub fn solve_bvp(
    mesh: &TriMesh,
    case: &ManufacturedCase,
    assembly: &AssemblyOptions,
    solver: &LinearSolveConfig,
) -> Result<BvpResult> {
    let coeffs = case.state_coefficients();
    let quad = assembly.quadrature(&coeffs.singular_points);
    let sys = assemble_state(mesh, &coeffs, assembly);
    let fac = Factorization::new(&sys.k, solver)?;

    let mut rhs = sys.load_f.clone();
    axpy(1.0, &load_boundary(mesh, &*case.exact_flux_fn(), assembly.edge_points), &mut rhs);
    let state = fac.solve(&rhs)?.0;

    let c = *case;
    let source = move |x: Point| c.y(x) - c.y_d(x);
    let mut rhs = load_domain(mesh, &source, &quad);
    axpy(1.0, &load_boundary(mesh, &*case.g_phi_fn(), assembly.edge_points), &mut rhs);
    let adjoint = fac.solve_transposed(&rhs)?.0;

    let (ey, ep) = (case.exact_state(), case.exact_adjoint());
    Ok(BvpResult {
        err_y_l2: error_l2_domain(mesh, &state, &*ey.value, &quad),
        err_y_h1: error_h1_domain(mesh, &state, &ey, &quad),
        err_phi_l2: error_l2_domain(mesh, &adjoint, &*ep.value, &quad),
        err_phi_h1: error_h1_domain(mesh, &adjoint, &ep, &quad),
        state,
        adjoint,
    })
}

/// The control problem of the manufactured example on `mesh`.
pub fn example_problem(mesh: &TriMesh, cfg: &StudyConfig) -> Result<OcpProblem> {
    let case = cfg.case()?;
    let data = OcpData {
        coeffs: case.state_coefficients(),
        y_d: case.y_d_fn(),
        g_phi: case.g_phi_fn(),
        nu: cfg.nu,
        bounds: cfg.bounds,
    };
    OcpProblem::assemble(mesh, &data, &cfg.assembly, &cfg.solver, cfg.ocp)
}

/// Per-level output of a study.
#[derive(Clone, Debug, Serialize)]
pub struct LevelReport {
    pub record: ErrorRecord,
    pub ocp_iterations: usize,
    pub ocp_residual: f64,
    pub objective: f64,
    pub seconds: f64,
}

pub fn solve_level(mesh: &TriMesh, cfg: &StudyConfig) -> Result<LevelReport> {
    let start = crate::solver::Stopwatch::start();
    let case = cfg.case()?;
    let bvp = solve_bvp(mesh, &case, &cfg.assembly, &cfg.solver)?;
    let problem = example_problem(mesh, cfg)?;
    let sol = problem.solve()?;
    let u = case.u_fn();
    let err_u = error_l2_boundary(mesh, &sol.control, &*u, cfg.assembly.edge_points.max(8));
    Ok(LevelReport {
        record: ErrorRecord {
            level: mesh.level,
            h_nominal: mesh.h_nominal,
            ndof: mesh.num_nodes(),
            err_y_l2: bvp.err_y_l2,
            err_y_h1: bvp.err_y_h1,
            err_phi_l2: bvp.err_phi_l2,
            err_phi_h1: bvp.err_phi_h1,
            err_u_l2_gamma: err_u,
        },
        ocp_iterations: sol.iterations,
        ocp_residual: sol.residual,
        objective: sol.objective,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyResult {
    pub table: EocTable,
    pub levels: Vec<LevelReport>,
}

/// Errors and orders over the configured levels. Failures carry the level.
pub fn run_convergence_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let meshes = cfg.meshes()?;
    let run = |i: usize| solve_level(&meshes[i], cfg).map_err(|e| e.at_level(meshes[i].level));
    let results: Vec<Result<LevelReport>> = if cfg.parallel_levels {
        map_indexed(meshes.len(), run)
    } else {
        (0..meshes.len()).map(run).collect()
    };
    let levels = results.into_iter().collect::<Result<Vec<_>>>()?;
    let expected = expected_orders_for(&cfg.domain()?);
    let table = EocTable::new(levels.iter().map(|l| l.record).collect(), Some(expected));
    Ok(StudyResult { table, levels })
}

/// Scientific notation with three significant digits, e.g. `1.20e-01`.
pub fn sci(v: f64) -> String {
    let s = format!("{v:.2e}");
    match s.split_once('e') {
        Some((m, e)) => {
            let (sign, digits) = match e.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', e),
            };
            format!("{m}e{sign}{digits:0>2}")
        }
        None => s,
    }
}
