//! The discrete control problem: edgewise constant Neumann controls, the
//! reduced objective and its gradient through the adjoint `K^T`, and solvers
//! for the unconstrained and the box-constrained case.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_state, edge_quadrature, load_boundary, load_domain, AssembledSystem, AssemblyOptions, BoundaryMass,
};
use crate::coeffs::{BoundaryFn, CoefficientSet, ScalarFn};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::mesh::TriMesh;
use crate::solver::{Factorization, LinearSolveConfig};
use crate::sparse::{axpy, dot, CsrMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(with = "extended_real")]
    pub u_min: f64,
    #[serde(with = "extended_real")]
    pub u_max: f64,
}

/// JSON has no infinities, so they travel as `"inf"` / `"-inf"`.
mod extended_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            v => s.serialize_f64(v),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Option::<Repr>::deserialize(d)? {
            Some(Repr::Num(v)) => Ok(v),
            Some(Repr::Text(t)) => t.trim().parse().map_err(|_| serde::de::Error::custom(format!("'{t}' is not a bound"))),
            None => Err(serde::de::Error::custom("null bound; use \"inf\" or \"-inf\"")),
        }
    }
}

impl Bounds {
    pub const NONE: Bounds = Bounds { u_min: f64::NEG_INFINITY, u_max: f64::INFINITY };

    pub fn new(u_min: f64, u_max: f64) -> Result<Self> {
        if u_min.is_nan() || u_max.is_nan() || u_min > u_max {
            return Err(Error::InvalidParameter(format!("control bounds [{u_min}, {u_max}] are empty")));
        }
        Ok(Bounds { u_min, u_max })
    }

    pub fn is_unbounded(&self) -> bool {
        self.u_min == f64::NEG_INFINITY && self.u_max == f64::INFINITY
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.u_min).min(self.u_max)
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds::NONE
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcpOptions {
    /// Absolute tolerance on the per-edge projection-formula residual.
    pub opt_tol: f64,
    pub cg_max_iter: usize,
    pub active_set_max_iter: usize,
    pub gradient_max_iter: usize,
}

impl Default for OcpOptions {
    fn default() -> Self {
        OcpOptions { opt_tol: 1e-9, cg_max_iter: 200, active_set_max_iter: 50, gradient_max_iter: 5000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SolvePath {
    ConjugateGradient,
    ActiveSet,
    ProjectedGradient,
    Trivial,
}

#[derive(Clone, Debug, Serialize)]
pub struct OcpSolution {
    /// One value per boundary edge.
    pub control: Vec<f64>,
    pub state: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub objective: f64,
    /// `max_E |u_E - Proj(-(1/(nu h_E)) int_E phi_h)|`, recomputed from the returned fields.
    pub residual: f64,
    pub iterations: usize,
    pub path: SolvePath,
    pub history: Vec<f64>,
}

/// State, adjoint, objective and gradient at one control.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub state: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub objective: f64,
    /// Edgewise `(1/h_E) int_E phi_h + nu u_E`, the Riesz representative in
    /// the edge-lumped metric.
    pub gradient: Vec<f64>,
}

/// Edge means `(1/h_E) int_E u` by Gauss quadrature.
pub fn project_qh(mesh: &TriMesh, u: &(dyn Fn(Point) -> f64 + Sync), points: usize) -> Vec<f64> {
    mesh.boundary_edges
        .iter()
        .map(|e| {
            let s: f64 = edge_quadrature(mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]], points)
                .iter()
                .map(|&(x, _, w)| w * u(x))
                .sum();
            s / e.length
        })
        .collect()
}

/// The problem `min J_h(u)` over edgewise constant `u` within `bounds`.
pub struct OcpProblem {
    pub system: AssembledSystem,
    factorization: Factorization,
    /// `int f psi_i + int_Gamma g_y psi_i`
    state_load: Vec<f64>,
    /// `int y_d psi_i`
    yd_load: Vec<f64>,
    /// `||y_d||^2`, makes `J_h` the actual tracking functional
    yd_norm2: f64,
    /// `int_Gamma g_phi psi_i`
    gphi_load: Vec<f64>,
    pub nu: f64,
    pub bounds: Bounds,
    pub options: OcpOptions,
}

impl std::fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpProblem")
            .field("n", &self.system.n)
            .field("edges", &self.num_controls())
            .field("nu", &self.nu)
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// Everything defining a problem instance besides the mesh.
#[derive(Clone)]
pub struct OcpData {
    /// Operator coefficients with the state source `f` and datum `g_y`.
    pub coeffs: CoefficientSet,
    pub y_d: ScalarFn,
    pub g_phi: BoundaryFn,
    pub nu: f64,
    pub bounds: Bounds,
}

impl std::fmt::Debug for OcpData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpData").field("nu", &self.nu).field("bounds", &self.bounds).finish_non_exhaustive()
    }
}

impl OcpProblem {
    pub fn assemble(
        mesh: &TriMesh,
        data: &OcpData,
        assembly: &AssemblyOptions,
        solver: &LinearSolveConfig,
        options: OcpOptions,
    ) -> Result<Self> {
        let system = assemble_state(mesh, &data.coeffs, assembly);
        let quad = assembly.quadrature(&data.coeffs.singular_points);
        let yd_load = load_domain(mesh, &*data.y_d, &quad);
        let yd = data.y_d.clone();
        let yd_norm2 = crate::analysis::error_l2_domain(mesh, &vec![0.0; mesh.num_nodes()], &*yd, &quad).powi(2);
        let gphi_load = load_boundary(mesh, &*data.g_phi, assembly.edge_points);
        Self::new(system, yd_load, yd_norm2, gphi_load, data.nu, data.bounds, solver, options)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: AssembledSystem,
        yd_load: Vec<f64>,
        yd_norm2: f64,
        gphi_load: Vec<f64>,
        nu: f64,
        bounds: Bounds,
        solver: &LinearSolveConfig,
        options: OcpOptions,
    ) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::InvalidParameter(format!("nu = {nu} must be positive")));
        }
        Bounds::new(bounds.u_min, bounds.u_max)?;
        let n = system.n;
        if yd_load.len() != n || gphi_load.len() != n {
            return Err(Error::InvalidParameter("data vectors do not match the mesh".into()));
        }
        let factorization = Factorization::new(&system.k, solver)?;
        let mut state_load = system.load_f.clone();
        axpy(1.0, &system.load_g, &mut state_load);
        Ok(OcpProblem { system, factorization, state_load, yd_load, yd_norm2, gphi_load, nu, bounds, options })
    }

    pub fn num_controls(&self) -> usize {
        self.system.m_gamma.num_edges()
    }

    pub fn boundary_mass(&self) -> &BoundaryMass {
        &self.system.m_gamma
    }

    pub fn operator(&self) -> &CsrMatrix {
        &self.system.k
    }

    /// Edge-lumped inner product `sum_E h_E a_E b_E`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.system.m_gamma.lumped().iter().zip(a).zip(b).map(|((h, x), y)| h * x * y).sum()
    }

    /// `y_h(u)`: `K y = int f psi + int_Gamma (g_y + u) psi`.
    pub fn state(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.system.m_gamma.apply(u);
        axpy(1.0, &self.state_load, &mut rhs);
        Ok(self.factorization.solve(&rhs)?.0)
    }

    /// `phi_h`: `K^T phi = M y - int y_d psi + int_Gamma g_phi psi`.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.system.m_omega.matvec(y);
        axpy(-1.0, &self.yd_load, &mut rhs);
        axpy(1.0, &self.gphi_load, &mut rhs);
        Ok(self.factorization.solve_transposed(&rhs)?.0)
    }

    fn objective_at(&self, y: &[f64], u: &[f64]) -> f64 {
        let my = self.system.m_omega.matvec(y);
        0.5 * (dot(y, &my) - 2.0 * dot(y, &self.yd_load) + self.yd_norm2)
            + 0.5 * self.nu * self.inner(u, u)
            + dot(y, &self.gphi_load)
    }

    /// `J_h(u) = 1/2 ||y_h - y_d||^2 + nu/2 ||u||^2_Gamma + int_Gamma y_h g_phi`.
    pub fn objective(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        let y = self.state(u)?;
        Ok(self.objective_at(&y, u))
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Evaluation> {
        self.check_len(u)?;
        let state = self.state(u)?;
        let adjoint = self.adjoint(&state)?;
        let objective = self.objective_at(&state, u);
        let mut gradient = self.system.m_gamma.edge_means(&adjoint);
        axpy(self.nu, u, &mut gradient);
        Ok(Evaluation { state, adjoint, objective, gradient })
    }

    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(u)?.gradient)
    }

    /// Reduced Hessian `nu v + (1/h_E) int_E (K^{-T} M K^{-1} M_gamma v)`;
    /// self-adjoint and positive definite in the edge-lumped metric.
    pub fn hessian_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dy = self.factorization.solve(&self.system.m_gamma.apply(v))?.0;
        let dphi = self.factorization.solve_transposed(&self.system.m_omega.matvec(&dy))?.0;
        let mut out = self.system.m_gamma.edge_means(&dphi);
        axpy(self.nu, v, &mut out);
        Ok(out)
    }

    /// `max_E |u_E - clamp(-(edge mean of phi)/nu)|`.
    pub fn projection_residual(&self, u: &[f64], adjoint: &[f64]) -> f64 {
        self.system
            .m_gamma
            .edge_means(adjoint)
            .iter()
            .zip(u)
            .map(|(m, ue)| (ue - self.bounds.clamp(-m / self.nu)).abs())
            .fold(0.0, f64::max)
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.num_controls() {
            return Err(Error::InvalidParameter(format!(
                "control has {} entries for {} boundary edges",
                u.len(),
                self.num_controls()
            )));
        }
        Ok(())
    }

    fn finish(&self, control: Vec<f64>, iterations: usize, path: SolvePath, history: Vec<f64>) -> Result<OcpSolution> {
        let ev = self.evaluate(&control)?;
        let residual = self.projection_residual(&control, &ev.adjoint);
        Ok(OcpSolution {
            control,
            state: ev.state,
            adjoint: ev.adjoint,
            objective: ev.objective,
            residual,
            iterations,
            path,
            history,
        })
    }

    /// Conjugate gradients in the edge-lumped metric for `H d = r` on the
    /// edges flagged in `free` (others held at zero), starting from `d = 0`.
    fn cg(&self, r0: &[f64], free: &[bool], tol: f64) -> Result<(Vec<f64>, usize, Vec<f64>)> {
        let m = r0.len();
        let mask = |v: &mut Vec<f64>| v.iter_mut().zip(free).for_each(|(x, &f)| if !f { *x = 0.0 });
        let mut r = r0.to_vec();
        mask(&mut r);
        let mut d = vec![0.0; m];
        let mut p = r.clone();
        let mut rr = self.inner(&r, &r);
        let mut history = Vec::new();
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for it in 0..self.options.cg_max_iter {
            let res = inf(&r);
            history.push(res);
            if res <= tol {
                return Ok((d, it, history));
            }
            let mut hp = self.hessian_apply(&p)?;
            mask(&mut hp);
            let alpha = rr / self.inner(&p, &hp);
            axpy(alpha, &p, &mut d);
            axpy(-alpha, &hp, &mut r);
            let rr_new = self.inner(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi = ri + beta * *pi;
            }
        }
        let res = inf(&r);
        if res <= tol {
            return Ok((d, self.options.cg_max_iter, history));
        }
        Err(Error::NoConvergence { method: "conjugate gradients", iterations: self.options.cg_max_iter, residual: res, history })
    }

    /// Stationary point `nu u_E + (1/h_E) int_E phi_h(u) = 0`, ignoring bounds.
    pub fn solve_unconstrained(&self) -> Result<OcpSolution> {
        let m = self.num_controls();
        let u0 = vec![0.0; m];
        let g0 = self.gradient(&u0)?;
        let rhs: Vec<f64> = g0.iter().map(|g| -g).collect();
        // the gradient residual is nu times the projection residual
        let tol = 0.5 * self.nu * self.options.opt_tol;
        let (u, iterations, history) = self.cg(&rhs, &vec![true; m], tol)?;
        self.finish(u, iterations, SolvePath::ConjugateGradient, history)
    }

    /// Box-constrained solve from `u = clamp(0)`.
    pub fn solve_box(&self) -> Result<OcpSolution> {
        let u0 = vec![self.bounds.clamp(0.0); self.num_controls()];
        self.solve_box_from(&u0)
    }

    /// Primal-dual active set iteration; falls back to projected gradients
    /// when the active sets do not settle.
    pub fn solve_box_from(&self, u0: &[f64]) -> Result<OcpSolution> {
        self.check_len(u0)?;
        let m = self.num_controls();
        let b = self.bounds;
        if b.u_min == b.u_max {
            return self.finish(vec![b.u_min; m], 0, SolvePath::Trivial, vec![]);
        }
        let mut u: Vec<f64> = u0.iter().map(|&v| b.clamp(v)).collect();
        let mut prev: Option<Vec<i8>> = None;
        let mut history = Vec::new();
        let mut cg_total = 0;
        for it in 0..self.options.active_set_max_iter {
            let ev = self.evaluate(&u)?;
            let means = self.system.m_gamma.edge_means(&ev.adjoint);
            let res = self.projection_residual(&u, &ev.adjoint);
            history.push(res);
            // -1 lower active, 1 upper active, 0 free
            let sets: Vec<i8> = means
                .iter()
                .map(|mv| {
                    let p = -mv / self.nu;
                    if p < b.u_min {
                        -1
                    } else if p > b.u_max {
                        1
                    } else {
                        0
                    }
                })
                .collect();
            if prev.as_ref() == Some(&sets) && res <= self.options.opt_tol {
                return self.finish(u, it + cg_total, SolvePath::ActiveSet, history);
            }
            let mut target = u.clone();
            for (t, s) in target.iter_mut().zip(&sets) {
                match s {
                    -1 => *t = b.u_min,
                    1 => *t = b.u_max,
                    _ => {}
                }
            }
            let free: Vec<bool> = sets.iter().map(|&s| s == 0).collect();
            let g = self.gradient(&target)?;
            let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
            let (d, k, _) = self.cg(&rhs, &free, 0.25 * self.nu * self.options.opt_tol)?;
            cg_total += k;
            axpy(1.0, &d, &mut target);
            u = target;
            prev = Some(sets);
        }
        let mut sol = self.projected_gradient(&u)?;
        sol.history = history.into_iter().chain(sol.history).collect();
        Ok(sol)
    }

    /// Projected gradient descent with Armijo backtracking. The objective
    /// decreases monotonically along the iterates.
    ///
    /// `J_h` is quadratic, so the change along a step `d` is evaluated as
    /// `<g, d> + 1/2 <H d, d>` rather than as a difference of two objective
    /// values, which would drown in rounding once steps become small.
    pub fn projected_gradient(&self, u0: &[f64]) -> Result<OcpSolution> {
        self.check_len(u0)?;
        let b = self.bounds;
        let mut u: Vec<f64> = u0.iter().map(|&v| b.clamp(v)).collect();
        let ev = self.evaluate(&u)?;
        let mut g = ev.gradient;
        let mut j = ev.objective;
        let mut history = vec![j];
        let mut step = 1.0 / self.nu;
        // residual from the gradient: the adjoint edge means are g - nu u
        let residual = |u: &[f64], g: &[f64]| {
            u.iter()
                .zip(g)
                .map(|(&ue, &ge)| (ue - b.clamp(ue - ge / self.nu)).abs())
                .fold(0.0, f64::max)
        };
        for it in 0..self.options.gradient_max_iter {
            if residual(&u, &g) <= 0.5 * self.options.opt_tol {
                return self.finish(u, it, SolvePath::ProjectedGradient, history);
            }
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = u.iter().zip(&g).map(|(x, gx)| b.clamp(x - step * gx)).collect();
                let d: Vec<f64> = trial.iter().zip(&u).map(|(a, c)| a - c).collect();
                let hd = self.hessian_apply(&d)?;
                let dj = self.inner(&g, &d) + 0.5 * self.inner(&hd, &d);
                if dj <= -1e-4 / step * self.inner(&d, &d) {
                    u = trial;
                    axpy(1.0, &hd, &mut g);
                    j += dj;
                    accepted = true;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            history.push(j);
            if !accepted {
                break;
            }
            if it % 50 == 49 {
                // refresh to keep the updated gradient from drifting
                g = self.gradient(&u)?;
            }
        }
        let sol = self.finish(u, self.options.gradient_max_iter, SolvePath::ProjectedGradient, history)?;
        if sol.residual <= self.options.opt_tol {
            return Ok(sol);
        }
        Err(Error::NoConvergence {
            method: "projected gradient",
            iterations: self.options.gradient_max_iter,
            residual: sol.residual,
            history: sol.history,
        })
    }

    /// Bounds-aware entry point: unconstrained CG when no bound is finite,
    /// active set iteration otherwise.
    pub fn solve(&self) -> Result<OcpSolution> {
        if self.bounds.is_unbounded() {
            self.solve_unconstrained()
        } else {
            self.solve_box()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::make_example;
    use crate::domain::PolygonDomain;
    use crate::mesh::{build_graded_mesh, GradingSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn mesh(level: usize) -> TriMesh {
        let d = PolygonDomain::preset("lshape").unwrap();
        build_graded_mesh(&d, level, &GradingSpec::uniform(d.corners().len())).unwrap()
    }

    fn example_problem(level: usize, nu: f64, bounds: Bounds) -> (TriMesh, OcpProblem) {
        let m = mesh(level);
        let case = make_example(6.0, -1.25, nu).unwrap();
        let data = OcpData { coeffs: case.state_coefficients(), y_d: case.y_d_fn(), g_phi: case.g_phi_fn(), nu, bounds };
        let p = OcpProblem::assemble(&m, &data, &AssemblyOptions::default(), &LinearSolveConfig::default(), OcpOptions::default())
            .unwrap();
        (m, p)
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn bounds_roundtrip_through_json() {
        for b in [Bounds::NONE, Bounds { u_min: -0.5, u_max: f64::INFINITY }, Bounds { u_min: 1.0, u_max: 2.0 }] {
            let text = serde_json::to_string(&b).unwrap();
            assert_eq!(serde_json::from_str::<Bounds>(&text).unwrap(), b, "{text}");
        }
        let b: Bounds = serde_json::from_str(r#"{"u_min": "-1.5", "u_max": 3}"#).unwrap();
        assert_eq!(b, Bounds { u_min: -1.5, u_max: 3.0 });
        assert!(serde_json::from_str::<Bounds>(r#"{"u_min": null, "u_max": 1}"#).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (_, p) = example_problem(3, 1.0, Bounds::NONE);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random(&mut rng, p.num_controls());
        let ev = p.evaluate(&u).unwrap();
        for _ in 0..5 {
            let v = random(&mut rng, p.num_controls());
            let t = 1e-5;
            let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + t * b).collect();
            let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - t * b).collect();
            let fd = (p.objective(&up).unwrap() - p.objective(&um).unwrap()) / (2.0 * t);
            let exact = p.inner(&ev.gradient, &v);
            assert!((fd - exact).abs() <= 1e-6 * (1.0 + ev.objective.abs()), "{fd} vs {exact}");
        }
    }

    #[test]
    fn objective_is_quadratic_along_lines() {
        let (_, p) = example_problem(2, 0.5, Bounds::NONE);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random(&mut rng, p.num_controls());
        let v = random(&mut rng, p.num_controls());
        let j = |t: f64| p.objective(&u.iter().zip(&v).map(|(a, b)| a + t * b).collect::<Vec<_>>()).unwrap();
        let (j0, j1, j2) = (j(0.0), j(1.0), j(2.0));
        // quadratic through t = 0, 1, 2 evaluated at t = 3
        let pred = j0 - 3.0 * j1 + 3.0 * j2;
        assert!((pred - j(3.0)).abs() < 1e-10 * (1.0 + pred.abs()));
    }

    #[test]
    fn nu_term_gradient_is_nu_u() {
        let (_, p) = example_problem(2, 2.5, Bounds::NONE);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random(&mut rng, p.num_controls());
        let ev = p.evaluate(&u).unwrap();
        let means = p.boundary_mass().edge_means(&ev.adjoint);
        for ((g, m), ue) in ev.gradient.iter().zip(&means).zip(&u) {
            assert!((g - m - 2.5 * ue).abs() < 1e-14);
        }
    }

    #[test]
    fn hessian_is_symmetric_and_objective_convex() {
        let (_, p) = example_problem(3, 1.0, Bounds::NONE);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = p.num_controls();
        let (v, w) = (random(&mut rng, n), random(&mut rng, n));
        let a = p.inner(&p.hessian_apply(&v).unwrap(), &w);
        let b = p.inner(&v, &p.hessian_apply(&w).unwrap());
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        for _ in 0..3 {
            let (u1, u2) = (random(&mut rng, n), random(&mut rng, n));
            let mid: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = p.objective(&mid).unwrap();
            let rhs = 0.5 * (p.objective(&u1).unwrap() + p.objective(&u2).unwrap());
            // the gap is nu/8 |u1 - u2|^2 at least
            let gap: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a - b).collect();
            assert!(rhs - lhs >= 0.9 * p.nu / 8.0 * p.inner(&gap, &gap));
        }
    }

    #[test]
    fn unconstrained_optimum_is_stationary() {
        let (_, p) = example_problem(4, 1.0, Bounds::NONE);
        let s = p.solve_unconstrained().unwrap();
        assert!(s.residual <= 1e-9, "{}", s.residual);
        let g = p.gradient(&s.control).unwrap();
        assert!(g.iter().all(|x| x.abs() <= 1e-9));
    }

    #[test]
    fn large_nu_shrinks_the_control() {
        let (_, p1) = example_problem(2, 1e4, Bounds::NONE);
        let (_, p2) = example_problem(2, 1e6, Bounds::NONE);
        let n1 = p1.solve_unconstrained().unwrap().control.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let n2 = p2.solve_unconstrained().unwrap().control.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!((n1 / n2 - 100.0).abs() < 1.0, "{n1} {n2}");
    }

    #[test]
    fn zero_objective_when_data_are_attained() {
        // y_d = y_h(0) as a discrete function, g_phi = 0: J_h(0) vanishes
        let m = mesh(2);
        let c = CoefficientSet::laplace(1.0).with_data(Arc::new(|x: Point| 1.0 + x.x), Arc::new(|_, _| 0.0));
        let system = assemble_state(&m, &c, &AssemblyOptions::default());
        let nu = 1e8;
        let mut p = OcpProblem::new(
            system.clone(),
            vec![0.0; m.num_nodes()],
            0.0,
            vec![0.0; m.num_nodes()],
            nu,
            Bounds::NONE,
            &LinearSolveConfig::default(),
            OcpOptions::default(),
        )
        .unwrap();
        let y0 = p.state(&vec![0.0; p.num_controls()]).unwrap();
        p.yd_load = system.m_omega.matvec(&y0);
        p.yd_norm2 = dot(&y0, &p.yd_load);
        assert!(p.objective(&vec![0.0; p.num_controls()]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn qh_preserves_box_and_is_orthogonal() {
        let m = mesh(3);
        let f = |x: Point| (3.0 * x.x).sin() * x.y.cos();
        let q = project_qh(&m, &f, 8);
        assert!(q.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert!(project_qh(&m, &|_| 0.75, 4).iter().all(|&v| (v - 0.75).abs() < 1e-15));
        for (e, qe) in m.boundary_edges.iter().zip(&q) {
            let s: f64 = edge_quadrature(m.nodes[e.nodes[0]], m.nodes[e.nodes[1]], 8)
                .iter()
                .map(|&(x, _, w)| w * (f(x) - qe))
                .sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn inactive_bounds_reproduce_unconstrained() {
        let (_, p) = example_problem(3, 1.0, Bounds::NONE);
        let free = p.solve_unconstrained().unwrap();
        let (_, pb) = example_problem(3, 1.0, Bounds::new(-100.0, 100.0).unwrap());
        let boxed = pb.solve_box().unwrap();
        assert_eq!(boxed.path, SolvePath::ActiveSet);
        for (a, b) in free.control.iter().zip(&boxed.control) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn point_box() {
        let (_, p) = example_problem(2, 1.0, Bounds::new(0.3, 0.3).unwrap());
        let s = p.solve_box().unwrap();
        assert!(s.control.iter().all(|&v| v == 0.3));
        assert_eq!(s.state, p.state(&s.control).unwrap());
        assert_eq!(s.adjoint, p.adjoint(&s.state).unwrap());
    }

    fn check_sign_conditions(p: &OcpProblem, s: &OcpSolution) -> (usize, usize) {
        let means = p.boundary_mass().edge_means(&s.adjoint);
        let (mut lo, mut hi) = (0, 0);
        for (m, &u) in means.iter().zip(&s.control) {
            let g = m + p.nu * u;
            if u == p.bounds.u_min {
                assert!(g >= -1e-9);
                lo += 1;
            } else if u == p.bounds.u_max {
                assert!(g <= 1e-9);
                hi += 1;
            } else {
                assert!(g.abs() <= 1e-8);
            }
        }
        (lo, hi)
    }

    #[test]
    fn active_bounds_satisfy_the_variational_inequality() {
        let (_, p) = example_problem(3, 1.0, Bounds::NONE);
        let free = p.solve_unconstrained().unwrap();
        let (mn, mx) = free.control.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let bounds = Bounds::new(mn + 0.3 * (mx - mn), mx - 0.3 * (mx - mn)).unwrap();
        let (_, pb) = example_problem(3, 1.0, bounds);
        let s = pb.solve_box().unwrap();
        assert!(s.residual <= 1e-8);
        let (lo, hi) = check_sign_conditions(&pb, &s);
        assert!(lo > 0 && hi > 0);
        // a different start reaches the same control
        let s2 = pb.solve_box_from(&vec![bounds.u_max; pb.num_controls()]).unwrap();
        for (a, b) in s.control.iter().zip(&s2.control) {
            assert!((a - b).abs() <= 10.0 * pb.options.opt_tol);
        }
        // and so does the projected gradient fallback, monotonically
        let pg = pb.projected_gradient(&vec![0.0; pb.num_controls()]).unwrap();
        assert!(pg.history.windows(2).all(|w| w[1] <= w[0]));
        for (a, b) in s.control.iter().zip(&pg.control) {
            assert!((a - b).abs() <= 1e-7);
        }
        check_sign_conditions(&pb, &pg);
    }

    #[test]
    fn controls_of_wrong_length_are_rejected() {
        let (_, p) = example_problem(1, 1.0, Bounds::NONE);
        assert!(p.objective(&[0.0]).is_err());
        assert!(Bounds::new(1.0, 0.0).is_err());
    }
}
