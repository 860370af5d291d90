use nalgebra::DVector;

use super::{acosh_clamped, distance, minkowski_dot, BoundaryDirection, GeomError, ModelPoint};

/// A unit-speed geodesic gamma(t) = p cosh t + u sinh t, where p is the
/// anchor (parameter 0), u the unit tangent at p, B(p,u) = 0, B(u,u) = 1.
/// Orientation is toward the forward endpoint, the null class of p + u.
#[derive(Debug, Clone)]
pub struct Geodesic {
    anchor: ModelPoint,
    tangent: DVector<f64>,
}

impl Geodesic {
    /// Geodesic through two distinct points, anchored at `x`, oriented so
    /// that gamma(d(x,y)) = y.
    pub fn between(x: &ModelPoint, y: &ModelPoint) -> Result<Self, GeomError> {
        let d = distance(x, y)?;
        if d < 1e-12 {
            return Err(GeomError::DegenerateGeodesic);
        }
        let u = (y.coords() - x.coords() * d.cosh()) / d.sinh();
        Ok(Self {
            anchor: x.clone(),
            tangent: u,
        })
    }

    /// Ray from `x` toward the boundary direction `xi`: gamma(0) = x and
    /// gamma(t) -> xi as t -> +infinity.
    pub fn ray(x: &ModelPoint, xi: &BoundaryDirection) -> Result<Self, GeomError> {
        if x.dim() != xi.dim() {
            return Err(GeomError::DimensionMismatch(x.dim(), xi.dim()));
        }
        let s = -xi.minkowski_with_point(x);
        // s = -B(x,xi) > 0 for any point and forward null direction
        let u = xi.coords() / s - x.coords();
        Ok(Self {
            anchor: x.clone(),
            tangent: u,
        })
    }

    /// Geodesic with the given (distinct) endpoints, anchored at its closest
    /// point to `x`.
    pub fn from_endpoints(
        backward: &BoundaryDirection,
        forward: &BoundaryDirection,
        x: &ModelPoint,
    ) -> Result<Self, GeomError> {
        let beta = minkowski_dot(backward.coords().as_slice(), forward.coords().as_slice());
        if beta >= -1e-15 {
            return Err(GeomError::DegenerateGeodesic);
        }
        let s = (-2.0 * beta).sqrt();
        let p = (backward.coords() + forward.coords()) / s;
        let u = (forward.coords() - backward.coords()) / s;
        let g = Self {
            anchor: ModelPoint::snap(p),
            tangent: u,
        };
        let (_, t) = dist_to_geodesic(x, &g)?;
        Ok(g.reanchored(t))
    }

    /// Same geodesic with the anchor moved to parameter `t`.
    pub fn reanchored(&self, t: f64) -> Geodesic {
        let p = self.anchor.coords();
        let u = &self.tangent;
        Geodesic {
            anchor: ModelPoint::snap(p * t.cosh() + u * t.sinh()),
            tangent: p * t.sinh() + u * t.cosh(),
        }
    }

    pub fn anchor(&self) -> &ModelPoint {
        &self.anchor
    }

    pub fn tangent(&self) -> &DVector<f64> {
        &self.tangent
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    /// Unit-speed parameterization from the anchor.
    pub fn point_at(&self, t: f64) -> ModelPoint {
        ModelPoint::snap(self.anchor.coords() * t.cosh() + &self.tangent * t.sinh())
    }

    /// Forward and backward endpoints on the boundary at infinity.
    pub fn endpoints(&self) -> Result<(BoundaryDirection, BoundaryDirection), GeomError> {
        let p = self.anchor.coords();
        let u = &self.tangent;
        let backward = BoundaryDirection::new((p - u).as_slice().to_vec())?;
        let forward = BoundaryDirection::new((p + u).as_slice().to_vec())?;
        Ok((backward, forward))
    }

    pub fn forward_endpoint(&self) -> Result<BoundaryDirection, GeomError> {
        Ok(self.endpoints()?.1)
    }
}

/// Infimum of d(x, gamma(t)) together with the (unique) minimizing parameter.
///
/// Writing -B(x, gamma(t)) = a cosh t + b sinh t with a = -B(x,p),
/// b = -B(x,u), the minimum value is sqrt(a^2 - b^2) at tanh t* = -b/a.
pub fn dist_to_geodesic(x: &ModelPoint, g: &Geodesic) -> Result<(f64, f64), GeomError> {
    if x.dim() != g.dim() {
        return Err(GeomError::DimensionMismatch(x.dim(), g.dim()));
    }
    let a = -x.minkowski(g.anchor());
    let b = -minkowski_dot(x.coords().as_slice(), g.tangent().as_slice());
    let m2 = a * a - b * b;
    let t = 0.5 * ((a - b) / (a + b)).ln();
    let d = acosh_clamped(m2.max(1.0).sqrt());
    Ok((d, t))
}

/// Gromov product (y,z)_x = (d(x,y) + d(x,z) - d(y,z)) / 2.
pub fn gromov_product(x: &ModelPoint, y: &ModelPoint, z: &ModelPoint) -> Result<f64, GeomError> {
    Ok(0.5 * (distance(x, y)? + distance(x, z)? - distance(y, z)?))
}

/// Gromov product of two boundary directions based at `o`:
/// -log sin(theta/2) for the visual angle theta at o. Returns +infinity when
/// the directions coincide.
pub fn gromov_product_boundary(
    o: &ModelPoint,
    xi: &BoundaryDirection,
    eta: &BoundaryDirection,
) -> Result<f64, GeomError> {
    if o.dim() != xi.dim() || o.dim() != eta.dim() {
        return Err(GeomError::DimensionMismatch(o.dim(), xi.dim()));
    }
    let uxi = unit_tangent_toward(o, xi);
    let ueta = unit_tangent_toward(o, eta);
    let cos_theta = minkowski_dot(uxi.as_slice(), ueta.as_slice());
    // sin^2(theta/2) = (1 - cos theta)/2
    let s2 = (1.0 - cos_theta) / 2.0;
    if s2 <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-0.5 * s2.ln())
}

/// Gromov product of a finite point `y` and a boundary direction `xi` based
/// at `o`: the limit of (y, gamma_xi(t))_o as t -> infinity. Closed form
/// (d(o,y) - log( B(y,xi)/B(o,xi) )) / 2 via the Busemann cocycle.
pub fn gromov_product_to_boundary(
    o: &ModelPoint,
    y: &ModelPoint,
    xi: &BoundaryDirection,
) -> Result<f64, GeomError> {
    if o.dim() != y.dim() || o.dim() != xi.dim() {
        return Err(GeomError::DimensionMismatch(o.dim(), y.dim()));
    }
    let d = distance(o, y)?;
    let by = -xi.minkowski_with_point(y);
    let bo = -xi.minkowski_with_point(o);
    Ok(0.5 * (d - (by / bo).ln()))
}

/// Shadow membership: (y,xi)_o >= d(o,y) - tau, the region behind `y` as
/// seen from `o`.
pub fn in_shadow(
    o: &ModelPoint,
    y: &ModelPoint,
    tau: f64,
    xi: &BoundaryDirection,
) -> Result<bool, GeomError> {
    let gp = gromov_product_to_boundary(o, y, xi)?;
    Ok(gp >= distance(o, y)? - tau)
}

/// Unit tangent at `o` pointing toward `xi`: xi / (-B(o,xi)) - o.
fn unit_tangent_toward(o: &ModelPoint, xi: &BoundaryDirection) -> DVector<f64> {
    let s = -xi.minkowski_with_point(o);
    xi.coords() / s - o.coords()
}
