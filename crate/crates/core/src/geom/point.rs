use nalgebra::DVector;

use super::{acosh_clamped, minkowski_dot, GeomError};
use crate::constants::GEOM_TOL;

/// A point of H^n on the future sheet of the hyperboloid B(x,x) = -1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPoint {
    coords: DVector<f64>,
}

impl ModelPoint {
    /// Validates B(x,x) = -1 (relative to the coordinate scale, so points far
    /// out on the sheet remain representable) and x_0 > 0.
    pub fn new(coords: Vec<f64>) -> Result<Self, GeomError> {
        let v = DVector::from_vec(coords);
        Self::from_vector(v)
    }

    pub fn from_vector(coords: DVector<f64>) -> Result<Self, GeomError> {
        if coords.len() < 3 {
            return Err(GeomError::InvalidPoint(format!(
                "need n >= 2, i.e. at least 3 coordinates, got {}",
                coords.len()
            )));
        }
        if coords[0] <= 0.0 {
            return Err(GeomError::InvalidPoint(format!(
                "x_0 = {} is not on the future sheet",
                coords[0]
            )));
        }
        let b = minkowski_dot(coords.as_slice(), coords.as_slice());
        let scale = 1f64.max(coords[0] * coords[0]);
        if (b + 1.0).abs() > GEOM_TOL * scale {
            return Err(GeomError::InvalidPoint(format!(
                "B(x,x) = {b} is not -1 within tolerance"
            )));
        }
        Ok(Self { coords })
    }

    /// Construct without validation and snap exactly onto the sheet by
    /// rescaling. Callers must guarantee the input is close to the sheet.
    pub(crate) fn snap(mut coords: DVector<f64>) -> Self {
        let b = minkowski_dot(coords.as_slice(), coords.as_slice());
        if b < 0.0 {
            coords /= (-b).sqrt();
        }
        Self { coords }
    }

    /// The designated base point e_0 = (1, 0, ..., 0).
    pub fn base(n: usize) -> Self {
        let mut c = DVector::zeros(n + 1);
        c[0] = 1.0;
        Self { coords: c }
    }

    /// Spatial dimension n.
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn minkowski(&self, other: &ModelPoint) -> f64 {
        minkowski_dot(self.coords.as_slice(), other.coords.as_slice())
    }

    /// Coordinates in the Poincare ball model centered at the base point:
    /// v_i = x_i / (1 + x_0).
    pub fn ball_coords(&self) -> DVector<f64> {
        let d = 1.0 + self.coords[0];
        DVector::from_fn(self.dim(), |i, _| self.coords[i + 1] / d)
    }

    /// The boundary direction seen from the base point through this point as
    /// it escapes to infinity: spatial part of x normalized to the null cone.
    pub fn escape_direction(&self) -> Result<BoundaryDirection, GeomError> {
        let n = self.dim();
        let mut spatial: Vec<f64> = (1..=n).map(|i| self.coords[i] / self.coords[0]).collect();
        let norm = spatial.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GeomError::InvalidBoundary(
                "point is the base point; no escape direction".into(),
            ));
        }
        for v in &mut spatial {
            *v /= norm;
        }
        let mut coords = vec![1.0];
        coords.extend(spatial);
        BoundaryDirection::new(coords)
    }
}

/// Hyperbolic distance arccosh(-B(x,y)).
pub fn distance(x: &ModelPoint, y: &ModelPoint) -> Result<f64, GeomError> {
    if x.dim() != y.dim() {
        return Err(GeomError::DimensionMismatch(x.dim(), y.dim()));
    }
    let q = -x.minkowski(y);
    let scale = 1f64.max(x.coords[0].abs() * y.coords[0].abs());
    if q < 1.0 - GEOM_TOL * scale {
        return Err(GeomError::InvariantViolation(format!(
            "-B(x,y) = {q} < 1: inputs are off the hyperboloid"
        )));
    }
    Ok(acosh_clamped(q))
}

/// A point of the boundary at infinity: a forward null direction, normalized
/// so the 0-th coordinate is exactly 1 (hence the spatial part is a unit
/// vector).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDirection {
    coords: DVector<f64>,
}

impl BoundaryDirection {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeomError> {
        let mut v = DVector::from_vec(coords);
        if v.len() < 3 {
            return Err(GeomError::InvalidBoundary(format!(
                "need at least 3 coordinates, got {}",
                v.len()
            )));
        }
        if v[0] <= 0.0 {
            return Err(GeomError::InvalidBoundary(format!(
                "leading coordinate {} must be positive",
                v[0]
            )));
        }
        let b = minkowski_dot(v.as_slice(), v.as_slice());
        let scale = 1f64.max(v[0] * v[0]);
        if b.abs() > GEOM_TOL * scale {
            return Err(GeomError::InvalidBoundary(format!(
                "B(xi,xi) = {b} is not null within tolerance"
            )));
        }
        // Normalize: leading coordinate 1, spatial part exactly unit.
        let x0 = v[0];
        v /= x0;
        let norm = v.as_slice()[1..].iter().map(|c| c * c).sum::<f64>().sqrt();
        for i in 1..v.len() {
            v[i] /= norm;
        }
        Ok(Self { coords: v })
    }

    /// Direction at angle phi in the plane H^2 (n = 2): (1, cos phi, sin phi).
    pub fn from_angle(phi: f64) -> Self {
        Self {
            coords: DVector::from_vec(vec![1.0, phi.cos(), phi.sin()]),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn minkowski_with_point(&self, x: &ModelPoint) -> f64 {
        minkowski_dot(self.coords.as_slice(), x.coords().as_slice())
    }

    /// Euclidean distance of the normalized coordinate vectors; zero iff the
    /// directions coincide.
    pub fn coord_gap(&self, other: &BoundaryDirection) -> f64 {
        (&self.coords - &other.coords).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn base_point_is_valid() {
        let x = ModelPoint::base(2);
        assert_eq!(x.dim(), 2);
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn rejects_past_sheet_and_off_sheet() {
        assert!(ModelPoint::new(vec![-1.0, 0.0, 0.0]).is_err());
        assert!(ModelPoint::new(vec![1.5, 0.0, 0.0]).is_err());
        assert!(ModelPoint::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn distance_dimension_mismatch() {
        let x = ModelPoint::base(2);
        let y = ModelPoint::base(3);
        assert!(matches!(
            distance(&x, &y),
            Err(GeomError::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn boundary_normalization() {
        let xi = BoundaryDirection::new(vec![2.0, 2.0, 0.0]).unwrap();
        assert_eq!(xi.coords()[0], 1.0);
        assert_relative_eq!(xi.coords()[1], 1.0, epsilon = 1e-15);
        assert!(BoundaryDirection::new(vec![1.0, 0.5, 0.0]).is_err());
    }

    #[test]
    fn coord_gap_zero_iff_equal() {
        let a = BoundaryDirection::from_angle(0.3);
        let b = BoundaryDirection::from_angle(0.3);
        let c = BoundaryDirection::from_angle(1.0);
        assert_eq!(a.coord_gap(&b), 0.0);
        assert!(a.coord_gap(&c) > 0.1);
    }
}
