//! Small planar geometry helpers shared by the mesh, quadrature and assembly code.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A point (or vector) in the plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    #[inline]
    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    /// Rotation by +90 degrees.
    #[inline]
    pub fn perp(self) -> Point {
        Point::new(-self.y, self.x)
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<Point> for f64 {
    type Output = Point;
    #[inline]
    fn mul(self, rhs: Point) -> Point {
        Point::new(self * rhs.x, self * rhs.y)
    }
}

impl Neg for Point {
    type Output = Point;
    #[inline]
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn scaled(self, s: f64) -> Sym2 {
        Sym2::new(s * self.xx, s * self.xy, s * self.yy)
    }

    #[inline]
    pub fn apply(self, v: Point) -> Point {
        Point::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    pub fn det(self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let rad = (0.5 * (self.xx - self.yy)).hypot(self.xy);
        (mean - rad, mean + rad)
    }

    pub fn is_positive_definite(self) -> bool {
        self.xx > 0.0 && self.det() > 0.0
    }

    /// Inverse square root of a positive definite matrix.
    pub fn inv_sqrt(self) -> Option<Sym2> {
        if !self.is_positive_definite() {
            return None;
        }
        // A^{1/2} = (A + sqrt(det) I) / sqrt(tr + 2 sqrt(det))
        let s = self.det().sqrt();
        let t = (self.xx + self.yy + 2.0 * s).sqrt();
        let sqrt = Sym2::new((self.xx + s) / t, self.xy / t, (self.yy + s) / t);
        let d = sqrt.det();
        Some(Sym2::new(sqrt.yy / d, -sqrt.xy / d, sqrt.xx / d))
    }
}

/// Signed area of a closed polygon (positive when counterclockwise).
pub fn signed_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    0.5 * (0..n).map(|i| pts[i].cross(pts[(i + 1) % n])).sum::<f64>()
}

/// Twice the signed area of the triangle `(a, b, c)`.
#[inline]
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

/// Proper or touching intersection test for closed segments `[p1, p2]` and `[q1, q2]`.
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_seg = |a: Point, b: Point, c: Point| {
        c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
    };
    (d1 == 0.0 && on_seg(q1, q2, p1))
        || (d2 == 0.0 && on_seg(q1, q2, p2))
        || (d3 == 0.0 && on_seg(p1, p2, q1))
        || (d4 == 0.0 && on_seg(p1, p2, q2))
}

/// Counterclockwise angle from `from` to `to`, in `[0, 2pi)`.
pub fn ccw_angle(from: Point, to: Point) -> f64 {
    let a = from.cross(to).atan2(from.dot(to));
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn inv_sqrt_squares_to_inverse() {
        let a = Sym2::new(4.0, 1.0, 2.0);
        let r = a.inv_sqrt().unwrap();
        // r * a * r = I
        let ra = [
            [r.xx * a.xx + r.xy * a.xy, r.xx * a.xy + r.xy * a.yy],
            [r.xy * a.xx + r.yy * a.xy, r.xy * a.xy + r.yy * a.yy],
        ];
        let m00 = ra[0][0] * r.xx + ra[0][1] * r.xy;
        let m01 = ra[0][0] * r.xy + ra[0][1] * r.yy;
        let m11 = ra[1][0] * r.xy + ra[1][1] * r.yy;
        assert!((m00 - 1.0).abs() < 1e-14 && m01.abs() < 1e-14 && (m11 - 1.0).abs() < 1e-14);
        assert!(Sym2::new(1.0, 2.0, 1.0).inv_sqrt().is_none());
    }

    #[test]
    fn ccw_angle_range() {
        assert!((ccw_angle(Point::new(1.0, 0.0), Point::new(0.0, 1.0)) - PI / 2.0).abs() < 1e-15);
        assert!((ccw_angle(Point::new(1.0, 0.0), Point::new(0.0, -1.0)) - 1.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn crossing_segments() {
        let p = |x, y| Point::new(x, y);
        assert!(segments_intersect(p(0., 0.), p(1., 1.), p(0., 1.), p(1., 0.)));
        assert!(!segments_intersect(p(0., 0.), p(1., 0.), p(0., 1.), p(1., 1.)));
    }
}
