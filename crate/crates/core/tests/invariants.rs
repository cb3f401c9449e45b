use std::collections::HashMap;

use proptest::prelude::*;

use neumann_ocp::analysis::{eoc, sci, EocTable, ErrorRecord, MuSpec, StudyConfig};
use neumann_ocp::assembly::{assemble_mass, assemble_operator, AssemblyOptions, BoundaryMass};
use neumann_ocp::coeffs::CoefficientSet;
use neumann_ocp::domain::PolygonDomain;
use neumann_ocp::mesh::{build_graded_mesh, build_mesh_hierarchy, GradingSpec, TriMesh};
use neumann_ocp::ocp::{project_qh, Bounds};
use neumann_ocp::solver::{Factorization, LinearSolveConfig, SolveMethod};
use neumann_ocp::sparse::norm2;
use neumann_ocp::{Point, Sym2};

fn graded_lshape(mu: f64, level: usize) -> TriMesh {
    let mut d = PolygonDomain::preset("lshape").unwrap();
    d.set_grading_singular(mu).unwrap();
    build_graded_mesh(&d, level, &GradingSpec::from_domain(&d)).unwrap()
}

/// Interior edges are shared by two triangles, boundary edges by one, and
/// the boundary edge list is exactly the set of edges with one neighbour.
fn assert_conforming(mesh: &TriMesh) {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut boundary: Vec<(usize, usize)> =
        count.iter().filter(|(_, &c)| c == 1).map(|(&e, _)| e).collect();
    assert!(count.values().all(|&c| c == 1 || c == 2), "edge with more than two triangles");
    let mut listed: Vec<(usize, usize)> =
        mesh.boundary_edges.iter().map(|e| (e.nodes[0].min(e.nodes[1]), e.nodes[0].max(e.nodes[1]))).collect();
    boundary.sort();
    listed.sort();
    assert_eq!(boundary, listed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn graded_meshes_conform_and_tile_the_domain(mu in 0.3f64..=1.0, level in 1usize..=3) {
        let mesh = graded_lshape(mu, level);
        assert_conforming(&mesh);
        let area: f64 = (0..mesh.num_triangles()).map(|t| mesh.area(t)).sum();
        prop_assert!((area - 3.0).abs() < 1e-12);
        prop_assert!((0..mesh.num_triangles()).all(|t| mesh.area(t) > 0.0));
        prop_assert!((mesh.perimeter() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn convex_polygons_mesh_to_their_area(
        radii in proptest::collection::vec(0.5f64..2.0, 3..7),
        level in 1usize..=3,
    ) {
        let m = radii.len();
        let verts: Vec<Point> = radii
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let t = std::f64::consts::TAU * j as f64 / m as f64;
                Point::new(r * t.cos(), r * t.sin())
            })
            .collect();
        let d = match PolygonDomain::new(verts) {
            Ok(d) => d,
            // reflex vertices can make a star polygon degenerate; skip those
            Err(_) => return Ok(()),
        };
        let mesh = build_graded_mesh(&d, level, &GradingSpec::uniform(d.num_sides())).unwrap();
        assert_conforming(&mesh);
        let area: f64 = (0..mesh.num_triangles()).map(|t| mesh.area(t)).sum();
        prop_assert!((area - d.signed_area()).abs() < 1e-10 * d.signed_area());
    }

    #[test]
    fn finer_levels_only_add_nodes(mu in 0.4f64..=1.0) {
        let mut d = PolygonDomain::preset("lshape").unwrap();
        d.set_grading_singular(mu).unwrap();
        let meshes = build_mesh_hierarchy(&d, 4, &GradingSpec::from_domain(&d)).unwrap();
        for w in meshes.windows(2) {
            prop_assert!(w[1].num_nodes() > w[0].num_nodes());
            // nested hierarchy: coarse nodes keep their index and position
            prop_assert_eq!(&w[1].nodes[..w[0].num_nodes()], &w[0].nodes[..]);
        }
    }

    #[test]
    fn diffusion_annihilates_constants(bx in -3.0f64..3.0, by in -3.0f64..3.0, a11 in 0.5f64..2.0) {
        // K 1 = 0: constants have no gradient and there is no reaction
        let mesh = graded_lshape(0.6, 2);
        let a = Sym2::new(a11, 0.2, 1.0);
        let k = assemble_operator(&mesh, &CoefficientSet::constant(a, Point::new(bx, by), 0.0), &AssemblyOptions::default());
        let ones = vec![1.0; mesh.num_nodes()];
        let r = k.matvec(&ones);
        prop_assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mass_matrix_integrates_linears(cx in -2.0f64..2.0, cy in -2.0f64..2.0, c0 in -2.0f64..2.0) {
        // 1^T M v = int v, exact for P1 v
        let mesh = graded_lshape(0.5, 2);
        let m = assemble_mass(&mesh);
        let v: Vec<f64> = mesh.nodes.iter().map(|p| c0 + cx * p.x + cy * p.y).collect();
        let total: f64 = m.matvec(&v).iter().sum();
        // three unit squares centred at (-1/2, 1/2), (1/2, 1/2), (-1/2, -1/2)
        let exact = 3.0 * c0 + cx * (-0.5 + 0.5 - 0.5) + cy * (0.5 + 0.5 - 0.5);
        prop_assert!((total - exact).abs() < 1e-12);
    }

    #[test]
    fn solves_with_k_and_its_transpose_agree(seed in 0u64..1000, gmres in any::<bool>()) {
        let mesh = graded_lshape(0.7, 2);
        let coeffs = CoefficientSet::constant(Sym2::IDENTITY, Point::new(2.0, -1.0), 1.0);
        let k = assemble_operator(&mesh, &coeffs, &AssemblyOptions::default());
        let cfg = LinearSolveConfig {
            method: if gmres { SolveMethod::Gmres } else { SolveMethod::Direct },
            ..LinearSolveConfig::default()
        };
        let f = Factorization::new(&k, &cfg).unwrap();
        let n = k.nrows();
        let r: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
        let (x, _) = f.solve(&r).unwrap();
        let (z, _) = f.solve_transposed(&r).unwrap();
        let res_x: Vec<f64> = k.matvec(&x).iter().zip(&r).map(|(a, b)| a - b).collect();
        let res_z: Vec<f64> = k.tr_matvec(&z).iter().zip(&r).map(|(a, b)| a - b).collect();
        prop_assert!(norm2(&res_x) <= 1e-9 * norm2(&r));
        prop_assert!(norm2(&res_z) <= 1e-9 * norm2(&r));
        // duality: <K x, z> = <x, K^T z> = <r, x> and <r, z>
        let lhs: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let kx = k.matvec(&x);
        let rhs: f64 = kx.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn boundary_mass_transpose_is_adjoint(seed in 0u64..1000) {
        let mesh = graded_lshape(0.5, 2);
        let bm = BoundaryMass::new(&mesh);
        let u: Vec<f64> = (0..bm.num_edges()).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 48.0 - 1.0).collect();
        let v: Vec<f64> = (0..bm.num_nodes()).map(|i| ((i as u64 * 104729 + seed) % 89) as f64 / 44.0 - 1.0).collect();
        let a: f64 = bm.apply(&u).iter().zip(&v).map(|(x, y)| x * y).sum();
        let b: f64 = bm.transpose_apply(&v).iter().zip(&u).map(|(x, y)| x * y).sum();
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn qh_preserves_boxes_and_constants(c in -5.0f64..5.0, lo in -2.0f64..0.0, width in 0.0f64..3.0) {
        let mesh = graded_lshape(0.8, 2);
        let q = project_qh(&mesh, &|_| c, 4);
        prop_assert!(q.iter().all(|v| (v - c).abs() < 1e-13 * (1.0 + c.abs())));
        let b = Bounds::new(lo, lo + width).unwrap();
        let f = move |x: Point| b.clamp(c * x.x - x.y * x.y);
        prop_assert!(project_qh(&mesh, &f, 6).iter().all(|&v| v >= lo - 1e-14 && v <= lo + width + 1e-14));
    }

    #[test]
    fn eoc_is_scale_invariant(errs in proptest::collection::vec(1e-6f64..1.0, 2..6), scale in 1e-3f64..1e3) {
        let rec = |j: usize, k: f64| ErrorRecord {
            level: j + 1,
            h_nominal: 0.5f64.powi(j as i32),
            ndof: 10 << j,
            err_y_l2: errs[j] * k,
            err_y_h1: errs[j] * k,
            err_phi_l2: errs[j] * k,
            err_phi_h1: errs[j] * k,
            err_u_l2_gamma: errs[j] * k,
        };
        let a = EocTable::new((0..errs.len()).map(|j| rec(j, 1.0)).collect(), None);
        let b = EocTable::new((0..errs.len()).map(|j| rec(j, scale)).collect(), None);
        for (x, y) in a.eocs.iter().zip(&b.eocs) {
            match (x, y) {
                (None, None) => {}
                (Some(x), Some(y)) => prop_assert!(x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-9)),
                _ => prop_assert!(false, "first-row EOC mismatch"),
            }
        }
        prop_assert!((eoc(errs[0], errs[0] / 4.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sci_round_trips_to_three_digits(v in 1e-12f64..1e12) {
        let s = sci(v);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-3 * v);
        let (m, e) = s.split_once('e').unwrap();
        prop_assert_eq!(m.len(), 4);
        prop_assert_eq!(e.len(), 3);
    }
}

#[test]
fn study_config_roundtrips_through_json() {
    let cfg = StudyConfig { mu: MuSpec::PerCorner(vec![0.5, 1.0, 1.0, 1.0, 1.0, 1.0]), ..StudyConfig::default() };
    let text = serde_json::to_string(&cfg).unwrap();
    let back: StudyConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    back.validate().unwrap();
}
