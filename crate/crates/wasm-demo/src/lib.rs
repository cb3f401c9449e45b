//! Browser bindings. Every export returns a JSON string for the page script.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use neumann_ocp::analysis::{
    error_l2_boundary, example_problem, run_convergence_study, MuSpec, StudyConfig, COLUMN_NAMES,
};
use neumann_ocp::mesh::{mesh_quality_report, TriMesh};
use neumann_ocp::ocp::Bounds;

/// Finest level served to the page; level 6 at strong grading is already
/// tens of thousands of unknowns.
pub const MAX_LEVEL: u32 = 6;

#[derive(Serialize)]
struct MeshJson {
    level: usize,
    h: f64,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

impl MeshJson {
    fn new(m: &TriMesh) -> Self {
        MeshJson {
            level: m.level,
            h: m.h_nominal,
            nodes: m.nodes.iter().map(|p| [p.x, p.y]).collect(),
            triangles: m.triangles.clone(),
        }
    }
}

fn config(mu: f64, min: u32, max: u32) -> Result<StudyConfig, String> {
    if max > MAX_LEVEL {
        return Err(format!("level {max} is above the demo limit {MAX_LEVEL}"));
    }
    let cfg = StudyConfig {
        mu: MuSpec::Singular(mu),
        level_min: min as usize,
        level_max: max as usize,
        parallel_levels: false,
        ..StudyConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn finest(cfg: &StudyConfig) -> Result<TriMesh, String> {
    cfg.meshes().map_err(|e| e.to_string())?.pop().ok_or_else(|| "no mesh".to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// L-shape mesh graded toward the reentrant corner, with its quality figures.
#[wasm_bindgen]
pub fn graded_mesh(mu: f64, level: u32) -> Result<String, String> {
    let cfg = config(mu, level, level)?;
    let mesh = finest(&cfg)?;
    let domain = cfg.domain().map_err(|e| e.to_string())?;
    let q = mesh_quality_report(&mesh, &cfg.grading(&domain));

    #[derive(Serialize)]
    struct Out {
        mesh: MeshJson,
        min_angle_deg: f64,
        min_diam: f64,
        max_diam: f64,
        violations: usize,
    }
    to_json(&Out {
        mesh: MeshJson::new(&mesh),
        min_angle_deg: q.min_angle_deg,
        min_diam: q.min_diam,
        max_diam: q.max_diam,
        violations: q.total_violations(),
    })
}

/// Discrete optimal control of the example problem with the state and
/// adjoint fields and the edgewise control against the exact one.
#[wasm_bindgen]
pub fn solve_control(mu: f64, level: u32, delta: f64, nu: f64, u_min: f64, u_max: f64) -> Result<String, String> {
    let mut cfg = config(mu, level, level)?;
    cfg.delta = delta;
    cfg.nu = nu;
    cfg.bounds = Bounds::new(u_min, u_max).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    let mesh = finest(&cfg)?;
    let case = cfg.case().map_err(|e| e.to_string())?;
    let sol = example_problem(&mesh, &cfg).and_then(|p| p.solve()).map_err(|e| e.to_string())?;
    let u_exact = case.u_fn();
    let err_u = error_l2_boundary(&mesh, &sol.control, &*u_exact, 8);

    #[derive(Serialize)]
    struct Edge {
        a: [f64; 2],
        b: [f64; 2],
        u: f64,
        u_exact_mid: f64,
    }
    #[derive(Serialize)]
    struct Out {
        mesh: MeshJson,
        state: Vec<f64>,
        adjoint: Vec<f64>,
        edges: Vec<Edge>,
        objective: f64,
        residual: f64,
        iterations: usize,
        path: String,
        err_u_l2_gamma: f64,
    }
    let edges = mesh
        .boundary_edges
        .iter()
        .zip(&sol.control)
        .map(|(e, &u)| {
            let (a, b) = (mesh.nodes[e.nodes[0]], mesh.nodes[e.nodes[1]]);
            // the exact control is clamped like the discrete one
            let mid = cfg.bounds.clamp(u_exact(a.midpoint(b)));
            Edge { a: [a.x, a.y], b: [b.x, b.y], u, u_exact_mid: mid }
        })
        .collect();
    to_json(&Out {
        mesh: MeshJson::new(&mesh),
        state: sol.state,
        adjoint: sol.adjoint,
        edges,
        objective: sol.objective,
        residual: sol.residual,
        iterations: sol.iterations,
        path: format!("{:?}", sol.path),
        err_u_l2_gamma: err_u,
    })
}

/// Errors and orders of the manufactured example over levels `1..=max_level`.
#[wasm_bindgen]
pub fn convergence_table(mu: f64, max_level: u32) -> Result<String, String> {
    if max_level < 2 {
        return Err("need at least two levels".into());
    }
    let cfg = config(mu, 1, max_level)?;
    let study = run_convergence_study(&cfg).map_err(|e| e.to_string())?;
    let t = &study.table;

    #[derive(Serialize)]
    struct Row {
        level: usize,
        h: f64,
        ndof: usize,
        errors: [f64; 5],
        eoc: Option<[f64; 5]>,
    }
    #[derive(Serialize)]
    struct Out {
        columns: [&'static str; 5],
        rows: Vec<Row>,
        expected: Option<[f64; 5]>,
    }
    let rows = t
        .records
        .iter()
        .zip(&t.eocs)
        .map(|(r, e)| Row { level: r.level, h: r.h_nominal, ndof: r.ndof, errors: r.errors(), eoc: *e })
        .collect();
    to_json(&Out { columns: COLUMN_NAMES, rows, expected: t.expected })
}
