//! Coefficient fields of the state operator and the manufactured L-shape example.
//!
//! The state operator is `-div(a grad y) + b . grad y + a0 y` with conormal
//! Neumann data. The example uses `ybar = r^lambda cos(lambda theta)`,
//! `phibar = -ybar`, `b = delta r^{alpha+1} (cos theta, sin theta)` and
//! `a0 = r^alpha`, singular at the reentrant corner for `alpha < 0`.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{Point, Sym2};

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point) -> Point + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(Point) -> Sym2 + Send + Sync>;
/// Boundary field evaluated at a point with its unit outward normal.
pub type BoundaryFn = Arc<dyn Fn(Point, Point) -> f64 + Send + Sync>;

pub fn constant(c: f64) -> ScalarFn {
    Arc::new(move |_| c)
}

pub fn zero_boundary() -> BoundaryFn {
    Arc::new(|_, _| 0.0)
}

/// Coefficients of the operator plus the source `f` and Neumann datum `g`
/// used for the load vectors.
#[derive(Clone)]
pub struct CoefficientSet {
    pub a: MatrixFn,
    pub b: VectorFn,
    pub a0: ScalarFn,
    pub div_b: ScalarFn,
    pub b_dot_n: BoundaryFn,
    pub f: ScalarFn,
    pub g: BoundaryFn,
    /// Points where some field is singular. Quadrature never samples them
    /// and refines geometrically toward them.
    pub singular_points: Vec<Point>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("singular_points", &self.singular_points)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    /// Constant coefficients `a`, `b`, `a0` with zero data.
    pub fn constant(a: Sym2, b: Point, a0: f64) -> Self {
        CoefficientSet {
            a: Arc::new(move |_| a),
            b: Arc::new(move |_| b),
            a0: constant(a0),
            div_b: constant(0.0),
            b_dot_n: Arc::new(move |_, n| b.dot(n)),
            f: constant(0.0),
            g: zero_boundary(),
            singular_points: Vec::new(),
        }
    }

    /// `-Laplace + a0` with zero data.
    pub fn laplace(a0: f64) -> Self {
        Self::constant(Sym2::IDENTITY, Point::ORIGIN, a0)
    }

    /// Replaces the convection field together with its divergence; `b . n` is
    /// taken from `b`.
    pub fn with_convection(mut self, b: VectorFn, div_b: ScalarFn) -> Self {
        let bb = b.clone();
        self.b = b;
        self.div_b = div_b;
        self.b_dot_n = Arc::new(move |x, n| bb(x).dot(n));
        self
    }

    pub fn with_reaction(mut self, a0: ScalarFn) -> Self {
        self.a0 = a0;
        self
    }

    pub fn with_data(mut self, f: ScalarFn, g: BoundaryFn) -> Self {
        self.f = f;
        self.g = g;
        self
    }

    /// Smallest eigenvalue of `a` and smallest value of `a0` over `points`.
    /// Fails when `a` is not uniformly positive definite there or `a0 < 0`.
    pub fn ellipticity_check(&self, points: &[Point]) -> Result<(f64, f64)> {
        let mut lam: f64 = f64::INFINITY;
        let mut a0_min: f64 = f64::INFINITY;
        for &x in points {
            let a = (self.a)(x);
            let (lo, _) = a.eigenvalues();
            if !(lo > 0.0) {
                return Err(Error::NotPositiveDefinite(format!("a({}, {}) = {a:?}", x.x, x.y)));
            }
            lam = lam.min(lo);
            let a0 = (self.a0)(x);
            if a0 < 0.0 {
                return Err(Error::InvalidParameter(format!("a0({}, {}) = {a0} < 0", x.x, x.y)));
            }
            a0_min = a0_min.min(a0);
        }
        Ok((lam, a0_min))
    }
}

/// Polar angle in `[0, 2pi)` measured from the positive x-axis.
pub fn theta_branch(x: Point) -> Result<f64> {
    if x == Point::ORIGIN {
        return Err(Error::SingularPoint("polar angle at the origin".into()));
    }
    Ok(theta_unchecked(x))
}

#[inline]
fn theta_unchecked(x: Point) -> f64 {
    let t = x.y.atan2(x.x);
    if t < 0.0 {
        t + TAU
    } else {
        t
    }
}

/// Closed-form data of the manufactured control problem on the L-shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManufacturedCase {
    pub delta: f64,
    pub alpha: f64,
    pub nu: f64,
    pub lambda: f64,
}

pub fn make_example(delta: f64, alpha: f64, nu: f64) -> Result<ManufacturedCase> {
    ManufacturedCase::new(delta, alpha, nu, 2.0 / 3.0)
}

impl ManufacturedCase {
    pub fn new(delta: f64, alpha: f64, nu: f64, lambda: f64) -> Result<Self> {
        if !(alpha > -1.5) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must exceed -3/2")));
        }
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::InvalidParameter(format!("nu = {nu} must be positive")));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta = {delta} must be nonnegative")));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
        }
        Ok(ManufacturedCase { delta, alpha, nu, lambda })
    }

    /// Exact state `r^lambda cos(lambda theta)`; zero at the origin.
    pub fn y(&self, x: Point) -> f64 {
        let r = x.norm();
        if r == 0.0 {
            return 0.0;
        }
        r.powf(self.lambda) * (self.lambda * theta_unchecked(x)).cos()
    }

    /// Gradient `lambda r^{lambda-1} (cos((lambda-1) theta), -sin((lambda-1) theta))`.
    pub fn grad_y(&self, x: Point) -> Result<Point> {
        let th = theta_branch(x)?;
        Ok(self.grad_y_at(x.norm(), th))
    }

    fn grad_y_at(&self, r: f64, th: f64) -> Point {
        let l = self.lambda;
        let c = l * r.powf(l - 1.0);
        let phase = (l - 1.0) * th;
        Point::new(c * phase.cos(), -c * phase.sin())
    }

    pub fn phi(&self, x: Point) -> f64 {
        -self.y(x)
    }

    pub fn grad_phi(&self, x: Point) -> Result<Point> {
        self.grad_y(x).map(|g| -g)
    }

    /// Exact control `-phibar / nu` on the boundary.
    pub fn u(&self, x: Point) -> f64 {
        -self.phi(x) / self.nu
    }

    /// `b = delta r^alpha x`.
    pub fn b(&self, x: Point) -> Point {
        let r = x.norm();
        (self.delta * r.powf(self.alpha)) * x
    }

    pub fn a0(&self, x: Point) -> f64 {
        x.norm().powf(self.alpha)
    }

    /// `div b = delta (alpha + 2) r^alpha`.
    pub fn div_b(&self, x: Point) -> f64 {
        self.delta * (self.alpha + 2.0) * x.norm().powf(self.alpha)
    }

    fn grad_y_unchecked(&self, x: Point) -> Point {
        self.grad_y_at(x.norm(), theta_unchecked(x))
    }

    /// `f = b . grad ybar + a0 ybar` (the Laplacian of `ybar` vanishes).
    pub fn f(&self, x: Point) -> f64 {
        self.b(x).dot(self.grad_y_unchecked(x)) + self.a0(x) * self.y(x)
    }

    /// `g_y = d_n ybar - ubar`.
    pub fn g_y(&self, x: Point, n: Point) -> f64 {
        self.grad_y_unchecked(x).dot(n) - self.u(x)
    }

    /// `y_d = ybar + div(phibar b) - a0 phibar`.
    pub fn y_d(&self, x: Point) -> f64 {
        let phi = self.phi(x);
        let grad_phi = -self.grad_y_unchecked(x);
        self.y(x) + phi * self.div_b(x) + self.b(x).dot(grad_phi) - self.a0(x) * phi
    }

    /// `g_phi = d_n phibar + phibar b . n`.
    pub fn g_phi(&self, x: Point, n: Point) -> f64 {
        let phi = self.phi(x);
        -self.grad_y_unchecked(x).dot(n) + phi * self.b(x).dot(n)
    }

    /// Operator coefficients with the state data `f` and `g_y`.
    pub fn state_coefficients(&self) -> CoefficientSet {
        let (c1, c2, c3, c4, c5) = (*self, *self, *self, *self, *self);
        CoefficientSet {
            a: Arc::new(|_| Sym2::IDENTITY),
            b: Arc::new(move |x| c1.b(x)),
            a0: Arc::new(move |x| c2.a0(x)),
            div_b: Arc::new(move |x| c3.div_b(x)),
            b_dot_n: Arc::new(move |x, n| c4.b(x).dot(n)),
            f: Arc::new(move |x| c5.f(x)),
            g: {
                let c = *self;
                Arc::new(move |x, n| c.g_y(x, n))
            },
            singular_points: vec![Point::ORIGIN],
        }
    }

    pub fn f_fn(&self) -> ScalarFn {
        let c = *self;
        Arc::new(move |x| c.f(x))
    }

    pub fn g_y_fn(&self) -> BoundaryFn {
        let c = *self;
        Arc::new(move |x, n| c.g_y(x, n))
    }

    /// Full Neumann datum of the state for the exact control, `g_y + ubar = d_n ybar`.
    pub fn exact_flux_fn(&self) -> BoundaryFn {
        let c = *self;
        Arc::new(move |x, n| c.g_y(x, n) + c.u(x))
    }

    pub fn y_d_fn(&self) -> ScalarFn {
        let c = *self;
        Arc::new(move |x| c.y_d(x))
    }

    pub fn g_phi_fn(&self) -> BoundaryFn {
        let c = *self;
        Arc::new(move |x, n| c.g_phi(x, n))
    }

    pub fn u_fn(&self) -> ScalarFn {
        let c = *self;
        Arc::new(move |x| c.u(x))
    }

    /// Exact state as a field with gradient.
    pub fn exact_state(&self) -> ExactField {
        let (c1, c2) = (*self, *self);
        ExactField {
            value: Arc::new(move |x| c1.y(x)),
            gradient: Arc::new(move |x| c2.grad_y_unchecked(x)),
        }
    }

    pub fn exact_adjoint(&self) -> ExactField {
        let (c1, c2) = (*self, *self);
        ExactField {
            value: Arc::new(move |x| c1.phi(x)),
            gradient: Arc::new(move |x| -c2.grad_y_unchecked(x)),
        }
    }
}

/// A scalar field with its gradient, used by the error norms.
#[derive(Clone)]
pub struct ExactField {
    pub value: ScalarFn,
    pub gradient: VectorFn,
}

impl ExactField {
    pub fn new(value: impl Fn(Point) -> f64 + Send + Sync + 'static, gradient: impl Fn(Point) -> Point + Send + Sync + 'static) -> Self {
        ExactField { value: Arc::new(value), gradient: Arc::new(gradient) }
    }
}

impl fmt::Debug for ExactField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ExactField")
    }
}
