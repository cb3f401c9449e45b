//! Polygonal domains, their corners and the per-corner singular exponents.
//!
//! Corner `j` sits at vertex `x_j` between the incoming side `j - 1` and the
//! outgoing side `j`; side `j` runs from `x_j` to `x_{j+1}` (indices mod `m`).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ccw_angle, segments_intersect, signed_area, Point, Sym2};

/// Geometric and grading data attached to one polygon vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerData {
    /// Interior angle in radians.
    pub omega: f64,
    /// Leading singular exponent of the operator at this corner.
    pub lambda: f64,
    /// Mesh grading parameter in `(0, 1]`; `1` means no grading.
    pub mu: f64,
    /// Weight exponent. Carried along for reporting only.
    pub beta: Option<f64>,
    /// Direction of the outgoing side `x_{j+1} - x_j`.
    pub edge_out: Point,
    /// Direction of the incoming side reversed, `x_{j-1} - x_j`.
    pub edge_back: Point,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolygonDomain {
    vertices: Vec<Point>,
    corners: Vec<CornerData>,
}

impl PolygonDomain {
    /// Validates a counterclockwise simple polygon and fills the corner data
    /// for identity diffusion (`lambda = pi / omega`, `mu = 1`).
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        let m = vertices.len();
        if m < 3 {
            return Err(Error::InvalidDomain(format!("need at least 3 vertices, got {m}")));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidDomain("non-finite vertex coordinate".into()));
        }
        for j in 0..m {
            if vertices[j] == vertices[(j + 1) % m] {
                return Err(Error::InvalidDomain(format!("vertices {j} and {} coincide", (j + 1) % m)));
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                // adjacent sides share an endpoint; skip them
                if j == i + 1 || (i == 0 && j == m - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % m]);
                let (c, d) = (vertices[j], vertices[(j + 1) % m]);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::InvalidDomain(format!("sides {i} and {j} intersect")));
                }
            }
        }
        let area = signed_area(&vertices);
        if area <= 0.0 {
            return Err(Error::InvalidDomain(format!(
                "vertices must be ordered counterclockwise (signed area {area})"
            )));
        }
        let corners = (0..m)
            .map(|j| {
                let edge_out = vertices[(j + 1) % m] - vertices[j];
                let edge_back = vertices[(j + m - 1) % m] - vertices[j];
                let omega = ccw_angle(edge_out, edge_back);
                CornerData { omega, lambda: PI / omega, mu: 1.0, beta: None, edge_out, edge_back }
            })
            .collect::<Vec<_>>();
        if let Some(j) = corners.iter().position(|c| c.omega <= 0.0 || c.omega >= 2.0 * PI) {
            return Err(Error::InvalidDomain(format!("degenerate angle at corner {j}")));
        }
        Ok(PolygonDomain { vertices, corners })
    }

    /// Domain preset by name: `"lshape"` or `"unit-square"`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "lshape" | "l-shape" => Ok(make_lshape()),
            "unit-square" | "square" => PolygonDomain::new(vec![
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(1.0, 1.0),
                Point::new(0.0, 1.0),
            ]),
            other => Err(Error::InvalidDomain(format!("unknown domain preset '{other}'"))),
        }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn corners(&self) -> &[CornerData] {
        &self.corners
    }

    pub fn num_sides(&self) -> usize {
        self.vertices.len()
    }

    /// Endpoints of side `j`.
    pub fn side(&self, j: usize) -> (Point, Point) {
        let m = self.vertices.len();
        (self.vertices[j % m], self.vertices[(j + 1) % m])
    }

    /// Unit outward normal of side `j`.
    pub fn outward_normal(&self, j: usize) -> Point {
        let (a, b) = self.side(j);
        let t = b - a;
        (1.0 / t.norm()) * Point::new(t.y, -t.x)
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.num_sides()).map(|j| {
            let (a, b) = self.side(j);
            a.dist(b)
        }).sum()
    }

    /// Smallest singular exponent over all corners.
    pub fn min_lambda(&self) -> f64 {
        self.corners.iter().map(|c| c.lambda).fold(f64::INFINITY, f64::min)
    }

    /// Sets per-corner grading parameters.
    pub fn set_grading(&mut self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.corners.len() {
            return Err(Error::InvalidParameter(format!(
                "{} grading parameters given for {} corners",
                mu.len(),
                self.corners.len()
            )));
        }
        if let Some(bad) = mu.iter().find(|&&m| !(m > 0.0 && m <= 1.0)) {
            return Err(Error::InvalidParameter(format!("grading parameter {bad} outside (0, 1]")));
        }
        for (c, &m) in self.corners.iter_mut().zip(mu) {
            c.mu = m;
        }
        Ok(())
    }

    /// Applies `mu` to every corner whose singular exponent is below one and
    /// leaves the others ungraded.
    pub fn set_grading_singular(&mut self, mu: f64) -> Result<()> {
        let list: Vec<f64> = self.corners.iter().map(|c| if c.lambda < 1.0 { mu } else { 1.0 }).collect();
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::InvalidParameter(format!("grading parameter {mu} outside (0, 1]")));
        }
        self.set_grading(&list)
    }

    /// Recomputes every `lambda` for the diffusion matrix `a` frozen at each corner.
    pub fn set_diffusion(&mut self, a_at_corner: impl Fn(Point) -> Sym2) -> Result<()> {
        let vertices = self.vertices.clone();
        for (c, &x) in self.corners.iter_mut().zip(&vertices) {
            c.lambda = singular_exponent(c, a_at_corner(x))?;
        }
        Ok(())
    }

    /// Index of the side containing `p`, if any (distance below `tol`).
    pub fn side_of_point(&self, p: Point, tol: f64) -> Option<usize> {
        (0..self.num_sides()).find(|&j| {
            let (a, b) = self.side(j);
            let t = b - a;
            let len = t.norm();
            let s = (p - a).dot(t) / (len * len);
            (-tol..=1.0 + tol).contains(&s) && ((p - a).cross(t) / len).abs() <= tol
        })
    }
}

/// The L-shaped domain `(-1,1)^2` minus the quadrant `{x > 0, y < 0}`, with the
/// reentrant corner at the origin as corner 0.
pub fn make_lshape() -> PolygonDomain {
    PolygonDomain::new(vec![
        Point::new(0.0, 0.0),
        Point::new(1.0, 0.0),
        Point::new(1.0, 1.0),
        Point::new(-1.0, 1.0),
        Point::new(-1.0, -1.0),
        Point::new(0.0, -1.0),
    ])
    .expect("L-shape is a valid polygon")
}

/// Leading singular exponent `pi / omega'` where `omega'` is the opening of
/// the corner after the change of variables `x -> a^{-1/2} x` that turns the
/// principal part into the Laplacian.
pub fn singular_exponent(corner: &CornerData, a_corner: Sym2) -> Result<f64> {
    if !(a_corner.xx.is_finite() && a_corner.xy.is_finite() && a_corner.yy.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{a_corner:?}")));
    }
    let t = a_corner
        .inv_sqrt()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{a_corner:?}")))?;
    let omega = ccw_angle(t.apply(corner.edge_out), t.apply(corner.edge_back));
    Ok(PI / omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corner_with(omega: f64, rotate: f64) -> CornerData {
        let out = Point::new(rotate.cos(), rotate.sin());
        let back = Point::new((rotate + omega).cos(), (rotate + omega).sin());
        CornerData { omega, lambda: PI / omega, mu: 1.0, beta: None, edge_out: out, edge_back: back }
    }

    #[test]
    fn lshape_corners() {
        let d = make_lshape();
        assert_eq!(d.num_sides(), 6);
        assert!((d.corners()[0].omega - 1.5 * PI).abs() < 1e-12);
        assert!((d.corners()[0].lambda - 2.0 / 3.0).abs() < 1e-14);
        for c in &d.corners()[1..] {
            assert!((c.omega - 0.5 * PI).abs() < 1e-12);
            assert!((c.lambda - 2.0).abs() < 1e-14);
        }
        assert_eq!(d.signed_area(), 3.0);
        assert_eq!(d.perimeter(), 8.0);
        assert!((d.min_lambda() - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn identity_exponents() {
        let c = corner_with(1.5 * PI, 0.0);
        assert!((singular_exponent(&c, Sym2::IDENTITY).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        let c = corner_with(0.5 * PI, 0.3);
        assert!((singular_exponent(&c, Sym2::IDENTITY).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_spd() {
        let c = corner_with(0.5 * PI, 0.0);
        assert!(singular_exponent(&c, Sym2::new(1.0, 2.0, 1.0)).is_err());
        assert!(singular_exponent(&c, Sym2::new(-1.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn rejects_bad_polygons() {
        let p = Point::new;
        // clockwise
        assert!(PolygonDomain::new(vec![p(0., 0.), p(0., 1.), p(1., 1.), p(1., 0.)]).is_err());
        // bow tie
        assert!(PolygonDomain::new(vec![p(0., 0.), p(1., 1.), p(1., 0.), p(0., 1.)]).is_err());
        // repeated vertex
        assert!(PolygonDomain::new(vec![p(0., 0.), p(1., 0.), p(1., 0.), p(0., 1.)]).is_err());
        assert!(PolygonDomain::new(vec![p(0., 0.), p(1., 0.)]).is_err());
    }

    #[test]
    fn grading_validation() {
        let mut d = make_lshape();
        assert!(d.set_grading(&[0.5; 5]).is_err());
        assert!(d.set_grading(&[0.0, 1., 1., 1., 1., 1.]).is_err());
        assert!(d.set_grading(&[1.2, 1., 1., 1., 1., 1.]).is_err());
        d.set_grading_singular(0.5).unwrap();
        assert_eq!(d.corners()[0].mu, 0.5);
        assert!(d.corners()[1..].iter().all(|c| c.mu == 1.0));
    }

    #[test]
    fn side_lookup() {
        let d = make_lshape();
        assert_eq!(d.side_of_point(Point::new(0.5, 0.0), 1e-12), Some(0));
        assert_eq!(d.side_of_point(Point::new(0.0, -0.5), 1e-12), Some(5));
        assert_eq!(d.side_of_point(Point::new(0.2, 0.2), 1e-12), None);
        let n = d.outward_normal(0);
        assert_eq!((n.x, n.y), (0.0, -1.0));
    }

    /// Independent check of the anisotropic exponent: with `u = Re(w^lambda)`
    /// in transformed coordinates anchored on the first side, bisect on
    /// `lambda` for the zero of the conormal flux `(a grad u) . n` across the
    /// second side, computed by finite differences in physical coordinates.
    fn conormal_root_oracle(corner: &CornerData, a: Sym2) -> f64 {
        let t = a.inv_sqrt().unwrap();
        let e1 = t.apply(corner.edge_out);
        let base = e1.y.atan2(e1.x);
        let u = |lam: f64, x: Point| {
            let w = t.apply(x);
            let r = w.norm();
            let th = ccw_angle(Point::new(base.cos(), base.sin()), w);
            r.powf(lam) * (lam * th).cos()
        };
        let dir = (1.0 / corner.edge_back.norm()) * corner.edge_back;
        // inward normal of the second side is the rotation of its direction
        let normal = Point::new(dir.y, -dir.x);
        let flux = |lam: f64| {
            // sample slightly inside the corner, away from the ray itself
            let x = dir + 1e-7 * normal;
            let h = 1e-6;
            let gx = (u(lam, x + Point::new(h, 0.0)) - u(lam, x - Point::new(h, 0.0))) / (2.0 * h);
            let gy = (u(lam, x + Point::new(0.0, h)) - u(lam, x - Point::new(0.0, h))) / (2.0 * h);
            a.apply(Point::new(gx, gy)).dot(normal)
        };
        // bracket the first sign change on a fine scan, then bisect
        let mut lo = 1e-3;
        let mut flo = flux(lo);
        let mut hi = lo;
        loop {
            hi += 1e-3;
            let fhi = flux(hi);
            if flo.signum() != fhi.signum() {
                break;
            }
            lo = hi;
            flo = fhi;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if flux(mid).signum() == flo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn anisotropic_exponent_matches_oracle() {
        // right-angle corner rotated by 45 degrees, a = diag(4, 1)
        let c = corner_with(0.5 * PI, 0.25 * PI);
        let a = Sym2::new(4.0, 0.0, 1.0);
        let lam = singular_exponent(&c, a).unwrap();
        let oracle = conormal_root_oracle(&c, a);
        // transformed opening is 2 atan(1/2)
        assert!((lam - PI / (2.0 * 0.5f64.atan())).abs() < 1e-12);
        assert!((lam - oracle).abs() < 1e-6, "{lam} vs {oracle}");
    }

    proptest! {
        #[test]
        fn identity_exponent_times_angle_is_pi(omega in 0.05..(2.0 * PI - 0.05), rot in 0.0..(2.0 * PI)) {
            let c = corner_with(omega, rot);
            let lam = singular_exponent(&c, Sym2::IDENTITY).unwrap();
            prop_assert!((lam * omega - PI).abs() < 1e-12);
        }

        #[test]
        fn exponent_invariant_under_scaling(
            omega in 0.2..(2.0 * PI - 0.2),
            a11 in 0.5..5.0f64, a22 in 0.5..5.0f64, off in -0.4..0.4f64, s in 0.01..100.0f64,
        ) {
            let a = Sym2::new(a11, off * (a11 * a22).sqrt(), a22);
            let c = corner_with(omega, 0.7);
            let l1 = singular_exponent(&c, a).unwrap();
            let l2 = singular_exponent(&c, a.scaled(s)).unwrap();
            prop_assert!((l1 - l2).abs() < 1e-10 * l1.max(1.0));
        }
    }
}
