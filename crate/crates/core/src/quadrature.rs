//! Quadrature on triangles and edges, including a composite rule that is
//! geometrically refined toward a singular vertex.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{orient, Point};

/// Symmetric rule on the reference triangle. Weights sum to one, so a
/// physical integral is `area * sum(w_q f(x_q))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

fn push_orbit(points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>, w: f64, bary: [f64; 3]) {
    let [a, b, c] = bary;
    let mut orbit = vec![[a, b, c], [b, c, a], [c, a, b], [a, c, b], [c, b, a], [b, a, c]];
    orbit.sort_by(|p, q| p.partial_cmp(q).unwrap());
    orbit.dedup();
    for p in orbit {
        points.push(p);
        weights.push(w);
    }
}

impl TriangleRule {
    /// Smallest tabulated rule exact for polynomials of total degree `degree`
    /// (tabulated degrees: 1, 2, 4, 5, 8).
    pub fn with_degree(degree: usize) -> TriangleRule {
        let mut p = Vec::new();
        let mut w = Vec::new();
        let exact = match degree {
            0 | 1 => {
                push_orbit(&mut p, &mut w, 1.0, [1.0 / 3.0; 3]);
                1
            }
            2 => {
                push_orbit(&mut p, &mut w, 1.0 / 3.0, [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]);
                2
            }
            3 | 4 => {
                let (a1, a2) = (0.108_103_018_168_070_2, 0.816_847_572_980_458_5);
                push_orbit(&mut p, &mut w, 0.223_381_589_678_011_5, [a1, 0.5 * (1.0 - a1), 0.5 * (1.0 - a1)]);
                push_orbit(&mut p, &mut w, 0.109_951_743_655_321_9, [a2, 0.5 * (1.0 - a2), 0.5 * (1.0 - a2)]);
                4
            }
            5 => {
                let s15 = 15f64.sqrt();
                push_orbit(&mut p, &mut w, 9.0 / 40.0, [1.0 / 3.0; 3]);
                let a1 = (9.0 - 2.0 * s15) / 21.0;
                let a2 = (9.0 + 2.0 * s15) / 21.0;
                push_orbit(&mut p, &mut w, (155.0 + s15) / 1200.0, [a1, 0.5 * (1.0 - a1), 0.5 * (1.0 - a1)]);
                push_orbit(&mut p, &mut w, (155.0 - s15) / 1200.0, [a2, 0.5 * (1.0 - a2), 0.5 * (1.0 - a2)]);
                5
            }
            _ => {
                // 16-point degree-8 rule
                push_orbit(&mut p, &mut w, 0.144_315_607_677_787, [1.0 / 3.0; 3]);
                for (wt, a) in [
                    (0.095_091_634_267_285, 0.081_414_823_414_554),
                    (0.103_217_370_534_718, 0.658_861_384_496_480),
                    (0.032_458_497_623_198, 0.898_905_543_365_938),
                ] {
                    push_orbit(&mut p, &mut w, wt, [a, 0.5 * (1.0 - a), 0.5 * (1.0 - a)]);
                }
                let (a, b) = (0.008_394_777_409_958, 0.263_112_829_634_638);
                push_orbit(&mut p, &mut w, 0.027_230_314_174_435, [a, b, 1.0 - a - b]);
                8
            }
        };
        TriangleRule { points: p, weights: w, degree: exact }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Parameters of the composite rule used on elements touching a singular point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerRefinement {
    /// Number of geometric layers.
    pub depth: usize,
    /// Scale ratio between consecutive layers, in `(0, 1)`.
    pub ratio: f64,
    /// Gauss points per layer in the radial direction.
    pub radial_points: usize,
    /// Gauss points per layer across the layer.
    pub angular_points: usize,
}

impl Default for CornerRefinement {
    fn default() -> Self {
        CornerRefinement { depth: 20, ratio: 0.25, radial_points: 12, angular_points: 16 }
    }
}

/// A physical quadrature point: position, barycentric coordinates with
/// respect to the element vertices, and weight including the area.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadPoint {
    pub x: Point,
    pub bary: [f64; 3],
    pub weight: f64,
}

/// Plain rule mapped to the triangle `tri`.
pub fn map_rule(tri: [Point; 3], rule: &TriangleRule, out: &mut Vec<QuadPoint>) {
    let area = 0.5 * orient(tri[0], tri[1], tri[2]).abs();
    for (b, &w) in rule.points.iter().zip(&rule.weights) {
        out.push(QuadPoint {
            x: b[0] * tri[0] + b[1] * tri[1] + b[2] * tri[2],
            bary: *b,
            weight: w * area,
        });
    }
}

/// Composite rule toward vertex `sing` of `tri`: layers
/// `q^{i+1} <= s <= q^i` of the collapsed map
/// `x(s, t) = v + s ((1 - t)(a - v) + t (b - v))`, plus the innermost piece
/// `0 <= s <= q^depth`, each get a tensor Gauss rule. `depth == 0` is the
/// plain `rule`.
pub fn corner_rule(tri: [Point; 3], sing: usize, rule: &TriangleRule, cfg: &CornerRefinement, out: &mut Vec<QuadPoint>) {
    if cfg.depth == 0 {
        map_rule(tri, rule, out);
        return;
    }
    let (ia, ib) = ((sing + 1) % 3, (sing + 2) % 3);
    let area2 = orient(tri[sing], tri[ia], tri[ib]).abs();
    let (sx, sw) = gauss_legendre(cfg.radial_points);
    let (tx, tw) = gauss_legendre(cfg.angular_points);
    let mut hi = 1.0;
    for layer in 0..=cfg.depth {
        // the last pass covers the innermost triangle 0 <= s <= q^depth
        let lo = if layer == cfg.depth { 0.0 } else { hi * cfg.ratio };
        let len = hi - lo;
        for (&su, &swu) in sx.iter().zip(&sw) {
            let s = lo + len * su;
            for (&t, &twu) in tx.iter().zip(&tw) {
                let mut bary = [0.0; 3];
                bary[sing] = 1.0 - s;
                bary[ia] = s * (1.0 - t);
                bary[ib] = s * t;
                out.push(QuadPoint {
                    x: bary[0] * tri[0] + bary[1] * tri[1] + bary[2] * tri[2],
                    bary,
                    weight: swu * len * twu * s * area2,
                });
            }
        }
        hi = lo;
    }
}

/// Chooses the composite rule for elements having a singular point as a
/// vertex and the plain rule elsewhere.
#[derive(Clone, Debug)]
pub struct ElementQuadrature {
    pub rule: TriangleRule,
    pub corner: CornerRefinement,
    pub singular_points: Vec<Point>,
}

impl ElementQuadrature {
    pub fn new(degree: usize, corner: CornerRefinement, singular_points: Vec<Point>) -> Self {
        ElementQuadrature { rule: TriangleRule::with_degree(degree), corner, singular_points }
    }

    /// Vertex of `tri` that coincides with a singular point, if any.
    pub fn singular_vertex(&self, tri: &[Point; 3]) -> Option<usize> {
        (0..3).find(|&i| self.singular_points.iter().any(|&s| s == tri[i]))
    }

    pub fn points_into(&self, tri: [Point; 3], out: &mut Vec<QuadPoint>) {
        out.clear();
        match self.singular_vertex(&tri) {
            Some(k) => corner_rule(tri, k, &self.rule, &self.corner, out),
            None => map_rule(tri, &self.rule, out),
        }
    }

    pub fn points(&self, tri: [Point; 3]) -> Vec<QuadPoint> {
        let mut out = Vec::new();
        self.points_into(tri, &mut out);
        out
    }
}

/// Integral of `f` over the triangle with the composite rule toward vertex `sing`.
pub fn corner_adapted_quadrature(
    tri: [Point; 3],
    sing: usize,
    f: impl Fn(Point) -> f64,
    depth: usize,
    ratio: f64,
) -> f64 {
    let cfg = CornerRefinement { depth, ratio, ..CornerRefinement::default() };
    let mut pts = Vec::new();
    corner_rule(tri, sing, &TriangleRule::with_degree(4), &cfg, &mut pts);
    pts.iter().map(|q| q.weight * f(q.x)).sum()
}
