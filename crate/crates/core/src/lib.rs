//! Finite-element solution of Neumann boundary control problems governed by
//! non-coercive convection-diffusion-reaction equations on polygonal domains.
//!
//! The pipeline is: [`domain`] describes the polygon and its corners, [`mesh`]
//! builds corner-graded triangulations by newest-vertex bisection, [`coeffs`]
//! holds coefficient fields and the manufactured L-shape example, [`assembly`]
//! produces the P1 matrices, [`solver`] factors them, [`ocp`] solves the
//! discrete control problem and [`analysis`] measures errors and convergence
//! orders.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod assembly;
pub mod coeffs;
pub mod domain;
pub mod error;
pub mod geometry;
pub mod mesh;
pub mod ocp;
pub mod quadrature;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
pub use geometry::{Point, Sym2};
