use super::{GeomError, Mobius, ModelPoint};

/// Upper-half-plane adapter for n = 2. The correspondence sends z = re + i*im
/// to the hyperboloid point
///
/// ((re^2+im^2+1)/(2 im), (re^2+im^2-1)/(2 im), re/im),
///
/// so i maps to the base point (1,0,0) and Mobius maps agree with the lifted
/// SO(2,1) action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlanePoint {
    pub re: f64,
    pub im: f64,
}

impl HalfPlanePoint {
    pub fn new(re: f64, im: f64) -> Result<Self, GeomError> {
        if !(im > 0.0) {
            return Err(GeomError::InvalidPoint(format!(
                "half-plane point needs im > 0, got {im}"
            )));
        }
        Ok(Self { re, im })
    }

    pub fn i() -> Self {
        Self { re: 0.0, im: 1.0 }
    }

    pub fn to_model(self) -> ModelPoint {
        let q = self.re * self.re + self.im * self.im;
        ModelPoint::snap(nalgebra::DVector::from_vec(vec![
            (q + 1.0) / (2.0 * self.im),
            (q - 1.0) / (2.0 * self.im),
            self.re / self.im,
        ]))
    }

    pub fn from_model(p: &ModelPoint) -> Result<Self, GeomError> {
        if p.dim() != 2 {
            return Err(GeomError::NotPlanar(p.dim()));
        }
        let c = p.coords();
        let im = 1.0 / (c[0] - c[1]);
        Self::new(c[2] * im, im)
    }

    /// Mobius action (a z + b)/(c z + d) in half-plane coordinates.
    pub fn apply_mobius(self, m: &Mobius) -> HalfPlanePoint {
        let (x, y) = (self.re, self.im);
        let nr = (m.a * x + m.b) * (m.c * x + m.d) + m.a * m.c * y * y;
        let den = (m.c * x + m.d).powi(2) + (m.c * y).powi(2);
        HalfPlanePoint {
            re: nr / den,
            im: m.det() * y / den,
        }
    }

    pub fn distance_to(self, other: HalfPlanePoint) -> f64 {
        // cosh d = 1 + |z - w|^2 / (2 im(z) im(w))
        let dr = self.re - other.re;
        let di = self.im - other.im;
        let q = 1.0 + (dr * dr + di * di) / (2.0 * self.im * other.im);
        super::acosh_clamped(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{distance, Isometry};
    use approx::assert_relative_eq;

    #[test]
    fn i_maps_to_base_point() {
        let p = HalfPlanePoint::i().to_model();
        assert_eq!(p.coords().as_slice(), &[1.0, 0.0, 0.0]);
        let back = HalfPlanePoint::from_model(&p).unwrap();
        assert_eq!(back, HalfPlanePoint::i());
    }

    #[test]
    fn round_trip_2i() {
        let z = HalfPlanePoint::new(0.0, 2.0).unwrap();
        let back = HalfPlanePoint::from_model(&z.to_model()).unwrap();
        assert!((back.re - 0.0).abs() < 1e-12);
        assert!((back.im - 2.0).abs() < 1e-12);
    }

    #[test]
    fn vertical_distance_is_log_ratio() {
        let a = HalfPlanePoint::i().to_model();
        let b = HalfPlanePoint::new(0.0, 2.0).unwrap().to_model();
        assert_relative_eq!(distance(&a, &b).unwrap(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn known_distance_i_to_1_plus_i() {
        let a = HalfPlanePoint::i().to_model();
        let b = HalfPlanePoint::new(1.0, 1.0).unwrap().to_model();
        assert_relative_eq!(distance(&a, &b).unwrap(), 1.5f64.acosh(), epsilon = 1e-12);
    }

    #[test]
    fn mobius_arithmetic_matches_lift() {
        // T.i = 1+i, S.(2i) = i/2
        let ti = HalfPlanePoint::i().apply_mobius(&Mobius::T);
        assert_relative_eq!(ti.re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(ti.im, 1.0, epsilon = 1e-15);
        let s2i = HalfPlanePoint::new(0.0, 2.0).unwrap().apply_mobius(&Mobius::S);
        assert_relative_eq!(s2i.re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s2i.im, 0.5, epsilon = 1e-15);

        // lifted action agrees through the correspondence
        let g = Isometry::from_mobius(Mobius::T);
        let via_model = HalfPlanePoint::from_model(
            &g.apply(&HalfPlanePoint::i().to_model()).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(via_model.re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(via_model.im, 1.0, epsilon = 1e-12);
    }
}
