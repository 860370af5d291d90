use nalgebra::{DMatrix, DVector};

use super::{minkowski_dot, BoundaryDirection, GeomError, ModelPoint};
use crate::constants::{DRIFT_BUDGET, GEOM_TOL};

/// A real 2x2 matrix of determinant 1 acting on the upper half-plane by
/// Mobius maps. Projectively g and -g act identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mobius {
    pub const IDENTITY: Mobius = Mobius { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };
    /// z -> z + 1
    pub const T: Mobius = Mobius { a: 1.0, b: 1.0, c: 0.0, d: 1.0 };
    /// z -> -1/z
    pub const S: Mobius = Mobius { a: 0.0, b: -1.0, c: 1.0, d: 0.0 };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, GeomError> {
        let det = a * d - b * c;
        if det <= 0.0 {
            return Err(GeomError::InvalidIsometry(format!(
                "Mobius determinant {det} must be positive"
            )));
        }
        let s = det.sqrt();
        Ok(Mobius { a: a / s, b: b / s, c: c / s, d: d / s })
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn compose(&self, other: &Mobius) -> Mobius {
        Mobius {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        }
    }

    pub fn inverse(&self) -> Mobius {
        Mobius { a: self.d, b: -self.b, c: -self.c, d: self.a }
    }

    /// Translation by length `l` along the imaginary axis (axis endpoints
    /// 0 and infinity), z -> e^l z.
    pub fn axis_translation(l: f64) -> Mobius {
        Mobius {
            a: (l / 2.0).exp(),
            b: 0.0,
            c: 0.0,
            d: (-l / 2.0).exp(),
        }
    }

    /// Projective equality: m == other or m == -other, entrywise within tol.
    pub fn projectively_eq(&self, other: &Mobius, tol: f64) -> bool {
        let close = |s: f64| {
            (self.a - s * other.a).abs() <= tol
                && (self.b - s * other.b).abs() <= tol
                && (self.c - s * other.c).abs() <= tol
                && (self.d - s * other.d).abs() <= tol
        };
        close(1.0) || close(-1.0)
    }
}

/// A linear map of Minkowski space preserving the form B and the future
/// sheet. For n = 2 the 2x2 Mobius representation is carried alongside; the
/// correspondence identifies a point (x0,x1,x2) with the symmetric matrix
/// X = [[x0+x1, x2],[x2, x0-x1]] of determinant 1, on which g acts by
/// X -> g X g^T.
#[derive(Debug, Clone, PartialEq)]
pub struct Isometry {
    matrix: DMatrix<f64>,
    mobius: Option<Mobius>,
}

impl Isometry {
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n + 1, n + 1),
            mobius: if n == 2 { Some(Mobius::IDENTITY) } else { None },
        }
    }

    /// Validates M^T J M = J entrywise within tolerance and preservation of
    /// the future sheet (M_00 > 0).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self, GeomError> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() < 3 {
            return Err(GeomError::InvalidIsometry(format!(
                "matrix must be square of size >= 3, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let drift = form_drift(&matrix);
        if drift > GEOM_TOL {
            return Err(GeomError::InvalidIsometry(format!(
                "M^T J M - J has entrywise drift {drift}"
            )));
        }
        if matrix[(0, 0)] <= 0.0 {
            return Err(GeomError::InvalidIsometry(
                "map swaps the sheets of the hyperboloid".into(),
            ));
        }
        Ok(Self { matrix, mobius: None })
    }

    /// Wrap a matrix without the form check; for internal use on matrices
    /// known to be isometries up to numerical drift. Still rejects maps that
    /// swap the sheets.
    pub(crate) fn from_matrix_unchecked(matrix: DMatrix<f64>) -> Result<Self, GeomError> {
        if matrix[(0, 0)] <= 0.0 || !matrix[(0, 0)].is_finite() {
            return Err(GeomError::InvalidIsometry(
                "matrix does not preserve the future sheet".into(),
            ));
        }
        Ok(Self { matrix, mobius: None })
    }

    pub(crate) fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Lift a Mobius map to the corresponding element of SO(2,1)^+.
    pub fn from_mobius(m: Mobius) -> Self {
        let Mobius { a, b, c, d } = m;
        // Columns are the images of e0, e1, e2 under X -> g X g^T.
        let col0 = [
            (a * a + b * b + c * c + d * d) / 2.0,
            (a * a + b * b - c * c - d * d) / 2.0,
            a * c + b * d,
        ];
        let col1 = [
            (a * a - b * b + c * c - d * d) / 2.0,
            (a * a - b * b - c * c + d * d) / 2.0,
            a * c - b * d,
        ];
        let col2 = [a * b + c * d, a * b - c * d, a * d + b * c];
        let matrix = DMatrix::from_fn(3, 3, |i, j| match j {
            0 => col0[i],
            1 => col1[i],
            _ => col2[i],
        });
        Self { matrix, mobius: Some(m) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn mobius(&self) -> Option<&Mobius> {
        self.mobius.as_ref()
    }

    pub fn compose(&self, other: &Isometry) -> Result<Isometry, GeomError> {
        if self.dim() != other.dim() {
            return Err(GeomError::DimensionMismatch(self.dim(), other.dim()));
        }
        let mobius = match (&self.mobius, &other.mobius) {
            (Some(a), Some(b)) => Some(a.compose(b)),
            _ => None,
        };
        Ok(Isometry {
            matrix: &self.matrix * &other.matrix,
            mobius,
        })
    }

    /// J M^T J; exact inverse for form-preserving M.
    pub fn inverse(&self) -> Isometry {
        let mut m = self.matrix.transpose();
        let n = m.nrows();
        for i in 1..n {
            m[(0, i)] = -m[(0, i)];
            m[(i, 0)] = -m[(i, 0)];
        }
        Isometry {
            matrix: m,
            mobius: self.mobius.map(|g| g.inverse()),
        }
    }

    /// Apply to a point. Errors when accumulated numerical drift has carried
    /// the image too far off the hyperboloid; within budget, the image is
    /// rescaled back onto the sheet.
    pub fn apply(&self, x: &ModelPoint) -> Result<ModelPoint, GeomError> {
        if self.dim() != x.dim() {
            return Err(GeomError::DimensionMismatch(self.dim(), x.dim()));
        }
        let y = &self.matrix * x.coords();
        let b = minkowski_dot(y.as_slice(), y.as_slice());
        let scale = 1f64.max(y[0] * y[0]);
        if (b + 1.0).abs() > DRIFT_BUDGET * scale {
            return Err(GeomError::InvariantViolation(format!(
                "image has B = {b}; product needs re-orthogonalization"
            )));
        }
        Ok(ModelPoint::snap(y))
    }

    pub fn apply_boundary(&self, xi: &BoundaryDirection) -> Result<BoundaryDirection, GeomError> {
        if self.dim() != xi.dim() {
            return Err(GeomError::DimensionMismatch(self.dim(), xi.dim()));
        }
        let y = &self.matrix * xi.coords();
        BoundaryDirection::new(y.as_slice().to_vec())
    }

    /// Entrywise drift of M^T J M from J.
    pub fn form_drift(&self) -> f64 {
        form_drift(&self.matrix)
    }

    /// Repair accumulated drift by B-Gram-Schmidt on the columns: column 0 is
    /// normalized timelike on the future cone, the rest spacelike unit.
    pub fn re_orthogonalize(&mut self) {
        let n = self.matrix.nrows();
        let mut cols: Vec<DVector<f64>> = (0..n).map(|j| self.matrix.column(j).into_owned()).collect();
        let norm0 = (-minkowski_dot(cols[0].as_slice(), cols[0].as_slice())).sqrt();
        cols[0] /= norm0;
        if cols[0][0] < 0.0 {
            cols[0] = -&cols[0];
        }
        for k in 1..n {
            for j in 0..k {
                let sign = if j == 0 { -1.0 } else { 1.0 };
                let coef = sign * minkowski_dot(cols[k].as_slice(), cols[j].as_slice());
                let proj = &cols[j] * coef;
                cols[k] -= proj;
            }
            let norm = minkowski_dot(cols[k].as_slice(), cols[k].as_slice()).sqrt();
            cols[k] /= norm;
        }
        for (j, c) in cols.iter().enumerate() {
            self.matrix.set_column(j, c);
        }
    }
}

fn form_drift(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut jm = m.clone();
    for j in 0..n {
        jm[(0, j)] = -jm[(0, j)];
    }
    let g = m.transpose() * jm; // M^T J M
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let want = if i != j {
                0.0
            } else if i == 0 {
                -1.0
            } else {
                1.0
            };
            worst = worst.max((g[(i, j)] - want).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_fixes_points() {
        let id = Isometry::identity(2);
        let x = ModelPoint::base(2);
        let y = id.apply(&x).unwrap();
        assert_eq!(y.coords(), x.coords());
    }

    #[test]
    fn mobius_lift_preserves_form() {
        for m in [Mobius::T, Mobius::S, Mobius::axis_translation(0.7)] {
            let g = Isometry::from_mobius(m);
            assert!(g.form_drift() < 1e-12, "drift {}", g.form_drift());
            assert!(g.matrix()[(0, 0)] > 0.0);
        }
    }

    #[test]
    fn inverse_composes_to_identity() {
        let g = Isometry::from_mobius(Mobius::T.compose(&Mobius::S));
        let e = g.compose(&g.inverse()).unwrap();
        let id = DMatrix::identity(3, 3);
        assert_relative_eq!(e.matrix(), &id, epsilon = 1e-9);
    }

    #[test]
    fn composition_associative() {
        let a = Isometry::from_mobius(Mobius::T);
        let b = Isometry::from_mobius(Mobius::S);
        let c = Isometry::from_mobius(Mobius::axis_translation(1.3));
        let l = a.compose(&b).unwrap().compose(&c).unwrap();
        let r = a.compose(&b.compose(&c).unwrap()).unwrap();
        assert_relative_eq!(l.matrix(), r.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn from_matrix_rejects_non_preserving() {
        let mut m = DMatrix::identity(3, 3);
        m[(1, 1)] = 2.0;
        assert!(Isometry::from_matrix(m).is_err());
    }

    #[test]
    fn reorthogonalize_restores_form() {
        // modest-entry product: drift repair is exact at this scale
        let g = Isometry::from_mobius(Mobius::axis_translation(0.01))
            .compose(&Isometry::from_mobius(Mobius::T.compose(&Mobius::S)))
            .unwrap();
        let mut w = Isometry::identity(2);
        for _ in 0..100 {
            w = w.compose(&g).unwrap();
        }
        let mut noisy = w.clone();
        // inject drift
        noisy.matrix[(1, 2)] += 1e-7;
        assert!(noisy.form_drift() > 1e-8);
        noisy.re_orthogonalize();
        assert!(noisy.form_drift() < 1e-12, "drift {}", noisy.form_drift());
    }

    #[test]
    fn s_is_projectively_involutive() {
        let s2 = Mobius::S.compose(&Mobius::S);
        assert!(s2.projectively_eq(&Mobius::IDENTITY, 1e-15));
    }
}
