//! Constant-curvature (-1) geometry of H^n in the hyperboloid model.
//!
//! Points live on the future sheet of { B(x,x) = -1 } in Minkowski space
//! R^{n,1}, isometries are linear maps preserving the form B and the sheet,
//! and the boundary at infinity is the projectivized forward null cone.
//! For n = 2 an upper-half-plane adapter with a 2x2 Mobius representation is
//! provided.

mod geodesic;
mod halfplane;
mod isometry;
mod point;

pub use geodesic::{
    dist_to_geodesic, gromov_product, gromov_product_boundary, gromov_product_to_boundary,
    in_shadow, Geodesic,
};
pub use halfplane::HalfPlanePoint;
pub use isometry::{Isometry, Mobius};
pub use point::{distance, BoundaryDirection, ModelPoint};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("invalid boundary direction: {0}")]
    InvalidBoundary(String),
    #[error("invalid isometry: {0}")]
    InvalidIsometry(String),
    #[error("degenerate geodesic: the two points coincide")]
    DegenerateGeodesic,
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("half-plane adapter requires n = 2, got n = {0}")]
    NotPlanar(usize),
}

/// Minkowski bilinear form B(x,y) = -x_0 y_0 + sum_i x_i y_i.
pub(crate) fn minkowski_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = -a[0] * b[0];
    for i in 1..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn acosh_clamped(q: f64) -> f64 {
    if q <= 1.0 {
        0.0
    } else {
        q.acosh()
    }
}
