//! Modular-group tooling: fundamental-domain reduction, cusp-based thickness,
//! thickness proportions along segments, and ball-excursion decomposition.
//!
//! Thickness on the modular quotient is parameterized by a cusp cutoff
//! height h: a point is thick when its reduced height is at most h. A
//! quotient point at reduced height y carries a cusp loop of length
//! asymptotically 1/y, so h plays the role of an inverse thickness
//! parameter; h is the primitive in every interface.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::constants::REDUCE_MAX_MOVES;
use crate::geom::{GeomError, Geodesic, HalfPlanePoint, Mobius, ModelPoint};

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("modular reduction requires n = 2, got n = {0}")]
    NotPlanar(usize),
    #[error("modular reduction did not terminate within {0} moves")]
    ReductionStuck(usize),
    #[error("segment needs t1 > t0, got [{0}, {1}]")]
    BadSegment(f64, f64),
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("grid step must be positive, got {0}")]
    BadGrid(f64),
    #[error("unknown word token {0:?}")]
    BadToken(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Reduce z to the standard fundamental domain of PSL(2,Z): |re| <= 1/2 and
/// |z| >= 1, with the left-closed convention (re = -1/2 and the left unit
/// arc included) so that reduction is a function on the quotient.
///
/// The returned word is the sequence of T / T^-1 / S moves whose Mobius
/// composition (leftmost applied last) carries the input exactly to the
/// output; see [`word_to_mobius`].
pub fn reduce_modular(z: HalfPlanePoint) -> Result<(HalfPlanePoint, String), LatticeError> {
    let mut z = z;
    let mut tokens: Vec<String> = Vec::new();
    let mut moves = 0usize;
    loop {
        // horizontal shift into re in [-1/2, 1/2)
        let k = (z.re + 0.5).floor();
        if k != 0.0 {
            moves += 1;
            if moves > REDUCE_MAX_MOVES {
                return Err(LatticeError::ReductionStuck(REDUCE_MAX_MOVES));
            }
            // one power token per shift, however large
            tokens.push(match -k as i64 {
                1 => "T".into(),
                -1 => "T^-1".into(),
                e => format!("T^{e}"),
            });
            z = HalfPlanePoint { re: z.re - k, im: z.im };
        }
        let norm2 = z.re * z.re + z.im * z.im;
        if norm2 < 1.0 {
            moves += 1;
            if moves > REDUCE_MAX_MOVES {
                return Err(LatticeError::ReductionStuck(REDUCE_MAX_MOVES));
            }
            tokens.push("S".into());
            z = z.apply_mobius(&Mobius::S);
            continue;
        }
        // boundary convention: the right unit arc maps to the left one
        if norm2 == 1.0 && z.re > 0.0 {
            tokens.push("S".into());
            z = z.apply_mobius(&Mobius::S);
        }
        break;
    }
    // word acts leftmost-last, so the most recent move is written first
    let mut word = String::new();
    for t in tokens.iter().rev() {
        if !word.is_empty() {
            word.push(' ');
        }
        let _ = write!(word, "{t}");
    }
    Ok((z, word))
}

/// Parse a reduction word back into the Mobius map it denotes (tokens are
/// composed left to right, leftmost outermost).
pub fn word_to_mobius(word: &str) -> Result<Mobius, LatticeError> {
    let mut m = Mobius::IDENTITY;
    for tok in word.split_whitespace() {
        let g = match tok {
            "T" => Mobius::T,
            "T^-1" => Mobius::T.inverse(),
            "S" => Mobius::S,
            other => match other
                .strip_prefix("T^")
                .and_then(|e| e.parse::<i64>().ok())
            {
                Some(e) => Mobius::new(1.0, e as f64, 0.0, 1.0)
                    .map_err(|_| LatticeError::BadToken(other.into()))?,
                None => return Err(LatticeError::BadToken(other.into())),
            },
        };
        m = m.compose(&g);
    }
    Ok(m)
}

/// Result of a thickness query: membership plus the reduced cusp height
/// (zero for oracles without a cusp notion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThicknessQuery {
    pub is_thick: bool,
    pub excursion_height: f64,
}

/// Thickness oracle for quotient geometry.
#[derive(Clone)]
pub enum ThinOracle {
    /// Modular quotient with cusp cutoff height h: thick iff the reduced
    /// height is at most h.
    ModularCusp { h: f64 },
    /// Every point is thick (cocompact stand-in).
    AllThick,
    /// User-supplied predicate.
    Custom(Arc<dyn Fn(&ModelPoint) -> bool + Send + Sync>),
}

impl std::fmt::Debug for ThinOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ThinOracle::ModularCusp { h } => write!(f, "ModularCusp {{ h: {h} }}"),
            ThinOracle::AllThick => write!(f, "AllThick"),
            ThinOracle::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl ThinOracle {
    pub fn query(&self, x: &ModelPoint) -> Result<ThicknessQuery, LatticeError> {
        match self {
            ThinOracle::ModularCusp { h } => {
                let z = HalfPlanePoint::from_model(x)?;
                let (red, _) = reduce_modular(z)?;
                Ok(ThicknessQuery {
                    is_thick: red.im <= *h,
                    excursion_height: red.im,
                })
            }
            ThinOracle::AllThick => Ok(ThicknessQuery { is_thick: true, excursion_height: 0.0 }),
            ThinOracle::Custom(p) => Ok(ThicknessQuery {
                is_thick: p(x),
                excursion_height: 0.0,
            }),
        }
    }

    pub fn is_thick(&self, x: &ModelPoint) -> Result<bool, LatticeError> {
        Ok(self.query(x)?.is_thick)
    }
}

/// Fraction of grid points (spacing `delta`) of gamma([t0, t1]) that are
/// thick. Since log of the cusp height is 1-Lipschitz along arc length, the
/// discretization misclassifies at most an O(delta / gap) fraction, where
/// gap is the smallest margin |log(height) - log(h)| attained on the
/// segment; refining delta by 10x changes the value by less than delta in
/// the sampled checks.
pub fn thickness_proportion(
    gamma: &Geodesic,
    t0: f64,
    t1: f64,
    oracle: &ThinOracle,
    delta: f64,
) -> Result<f64, LatticeError> {
    if !(t1 > t0) {
        return Err(LatticeError::BadSegment(t0, t1));
    }
    if !(delta > 0.0) {
        return Err(LatticeError::BadGrid(delta));
    }
    let m = ((t1 - t0) / delta + 1e-9).floor() as usize;
    let mut thick = 0usize;
    for i in 0..=m {
        let p = gamma.point_at(t0 + i as f64 * delta);
        if oracle.is_thick(&p)? {
            thick += 1;
        }
    }
    Ok(thick as f64 / (m + 1) as f64)
}

/// The sub-intervals of a geodesic segment lying outside both balls, with
/// their total length.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionReport {
    pub intervals: Vec<(f64, f64)>,
    pub total_length: f64,
}

/// The parameter interval of gamma inside the ball B(c, rho), if any.
///
/// d(gamma(t), c) = arccosh(m cosh(t - t_star)) with m cosh(t - t_star) =
/// a cosh t + b sinh t, a = -B(c, p), b = -B(c, u), so the inside-ball set
/// is |t - t_star| <= arccosh(cosh(rho) / m), solved in closed form.
fn ball_interval(gamma: &Geodesic, c: &ModelPoint, rho: f64) -> Option<(f64, f64)> {
    let a = -crate::geom::minkowski_dot(c.coords().as_slice(), gamma.anchor().coords().as_slice());
    let b = -crate::geom::minkowski_dot(c.coords().as_slice(), gamma.tangent().as_slice());
    let m2 = (a - b) * (a + b);
    if m2 <= 0.0 {
        return None;
    }
    let m = m2.sqrt();
    let ratio = rho.cosh() / m;
    if ratio <= 1.0 {
        return None;
    }
    let t_star = 0.5 * ((a - b) / (a + b)).ln();
    let w = ratio.acosh();
    Some((t_star - w, t_star + w))
}

/// Decompose gamma([t0, t1]) into the part outside B(c1, rho) union
/// B(c2, rho). Intervals are disjoint and sorted; total_length is their sum.
pub fn ball_excursions(
    gamma: &Geodesic,
    t0: f64,
    t1: f64,
    c1: &ModelPoint,
    c2: &ModelPoint,
    rho: f64,
) -> Result<ExcursionReport, LatticeError> {
    if !(t1 > t0) {
        return Err(LatticeError::BadSegment(t0, t1));
    }
    if !(rho > 0.0) {
        return Err(LatticeError::BadRadius(rho));
    }
    let mut inside: Vec<(f64, f64)> = [ball_interval(gamma, c1, rho), ball_interval(gamma, c2, rho)]
        .into_iter()
        .flatten()
        .filter_map(|(lo, hi)| {
            let lo = lo.max(t0);
            let hi = hi.min(t1);
            (hi > lo).then_some((lo, hi))
        })
        .collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge overlaps, then take the complement within [t0, t1]
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for iv in inside {
        match merged.last_mut() {
            Some(last) if iv.0 <= last.1 => last.1 = last.1.max(iv.1),
            _ => merged.push(iv),
        }
    }
    let mut intervals = Vec::new();
    let mut cursor = t0;
    for (lo, hi) in &merged {
        if *lo > cursor {
            intervals.push((cursor, *lo));
        }
        cursor = cursor.max(*hi);
    }
    if cursor < t1 {
        intervals.push((cursor, t1));
    }
    let total_length = intervals.iter().map(|(lo, hi)| hi - lo).sum();
    Ok(ExcursionReport { intervals, total_length })
}
