//! Boundary convergence of walks, harmonic-measure sampling, sphere measures
//! via ray shooting, and tracked geodesics of bi-infinite paths.
//!
//! Convergence of w_n x to the boundary is detected by contraction of a fixed
//! test triple of points: once the images of the triple have ball-model
//! diameter below tolerance, the cluster direction is taken as the limit.
//! This is robust to parabolic-dominated prefixes, unlike singular-vector
//! detection.
//!
//! Distances from orbit points x_k = w_k x to the tracked geodesic are
//! computed in the frame recentered at k: d(x_k, gamma) = d(x, w_k^-1 gamma),
//! where the endpoints of w_k^-1 gamma are obtained as fresh boundary limits
//! of the shifted increment sequences. Evaluating the closed-form distance in
//! the base frame instead would cancel catastrophically once x_k is a few
//! tens of units from x.

use nalgebra::DVector;
use thiserror::Error;

use crate::constants::{DEGENERACY_FACTOR, LIMIT_MAX_STEPS, LIMIT_TOL, LIMIT_TOL_FLOOR};
use crate::geom::{
    dist_to_geodesic, BoundaryDirection, GeomError, Geodesic, ModelPoint,
};
use crate::walk::{
    projective_ball_coords, BiInfinitePath, GroupDistribution, RngSpec, SamplePath, ScaledProduct,
    WalkError, Walker,
};

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error(
        "no boundary convergence after {steps} steps (triple diameter {diameter:.3e}, tol {tol:.3e})"
    )]
    NonConvergence { steps: usize, diameter: f64, tol: f64 },
    #[error("degenerate tracking: forward and backward limits coincide (gap {gap:.3e})")]
    DegenerateTracking { gap: f64 },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Walk(#[from] WalkError),
}

/// One draw from the harmonic measure: the limit direction of w_n x together
/// with diagnostics of the stopping rule.
#[derive(Debug, Clone)]
pub struct HarmonicSample {
    pub direction: BoundaryDirection,
    pub steps_used: usize,
    pub achieved_tol: f64,
    pub index: u64,
}

/// A point on the sphere S_r(x), remembering which boundary direction it was
/// shot toward.
#[derive(Debug, Clone)]
pub struct SpherePoint {
    pub point: ModelPoint,
    pub origin_direction: BoundaryDirection,
    pub radius: f64,
}

/// Fixed test triple at `x`: x itself plus points at distance 1 along two
/// B-orthonormal tangent directions.
fn test_triple(x: &ModelPoint) -> Result<[ModelPoint; 3], GeomError> {
    let n = x.dim();
    let mut triple = [x.clone(), x.clone(), x.clone()];
    let mut made = 0;
    for axis in 1..=n {
        if made == 2 {
            break;
        }
        // Gram-Schmidt e_axis against x under B
        let mut u = DVector::zeros(n + 1);
        u[axis] = 1.0;
        let coef = crate::geom::minkowski_dot(u.as_slice(), x.coords().as_slice());
        u += x.coords() * coef;
        let norm2 = crate::geom::minkowski_dot(u.as_slice(), u.as_slice());
        if norm2 < 1e-12 {
            continue;
        }
        u /= norm2.sqrt();
        let e1 = 1f64;
        let p = ModelPoint::snap(x.coords() * e1.cosh() + &u * e1.sinh());
        made += 1;
        triple[made] = p;
    }
    debug_assert_eq!(made, 2);
    Ok(triple)
}

struct LimitProbe {
    triple: [ModelPoint; 3],
}

impl LimitProbe {
    fn new(x: &ModelPoint) -> Result<Self, GeomError> {
        Ok(Self { triple: test_triple(x)? })
    }

    /// Ball-model diameter of the image triple under the scaled product.
    fn diameter(&self, w: &ScaledProduct) -> f64 {
        let b: Vec<DVector<f64>> = self
            .triple
            .iter()
            .map(|p| projective_ball_coords(&w.apply_raw(p.coords())))
            .collect();
        let d01 = (&b[0] - &b[1]).norm();
        let d02 = (&b[0] - &b[2]).norm();
        let d12 = (&b[1] - &b[2]).norm();
        d01.max(d02).max(d12)
    }

    fn direction(
        &self,
        w: &ScaledProduct,
        x: &ModelPoint,
    ) -> Result<BoundaryDirection, GeomError> {
        w.escape_direction(x)
    }
}

/// Limit direction of w_n x over a realized path. Fails with diagnostics if
/// the test triple has not contracted below `tol` within `max_steps` (or the
/// path length, whichever is smaller).
pub fn forward_limit(
    path: &SamplePath,
    x: &ModelPoint,
    tol: f64,
    max_steps: usize,
) -> Result<(BoundaryDirection, usize, f64), BoundaryError> {
    let probe = LimitProbe::new(x)?;
    let steps = path.len().min(max_steps);
    let mut last = f64::INFINITY;
    for k in 1..=steps {
        let d = probe.diameter(&path.products[k]);
        last = d;
        if d < tol {
            return Ok((probe.direction(&path.products[k], x)?, k, d));
        }
    }
    Err(BoundaryError::NonConvergence { steps, diameter: last, tol })
}

/// Incremental version: walk until converged, never materializing the path.
fn forward_limit_walker(
    dist: &GroupDistribution,
    rng: rand_chacha::ChaCha8Rng,
    x: &ModelPoint,
    tol: f64,
    max_steps: usize,
) -> Result<(BoundaryDirection, usize, f64), BoundaryError> {
    let probe = LimitProbe::new(x)?;
    let mut walker = Walker::new(dist, rng);
    let mut last = f64::INFINITY;
    for k in 1..=max_steps {
        walker.step();
        let d = probe.diameter(walker.product());
        last = d;
        if d < tol {
            return Ok((probe.direction(walker.product(), x)?, k, d));
        }
    }
    Err(BoundaryError::NonConvergence { steps: max_steps, diameter: last, tol })
}

/// Draw one harmonic-measure sample: fresh path from substream `index`, then
/// the boundary limit. Deterministic per (seed, index).
pub fn sample_harmonic(
    dist: &GroupDistribution,
    x: &ModelPoint,
    rng: &RngSpec,
    index: u64,
    tol: f64,
    max_steps: usize,
) -> Result<HarmonicSample, BoundaryError> {
    let (direction, steps_used, achieved_tol) =
        forward_limit_walker(dist, rng.substream(index), x, tol, max_steps)?;
    Ok(HarmonicSample { direction, steps_used, achieved_tol, index })
}

/// The point at distance r from x along the ray toward xi. This push-forward
/// of boundary directions through ray shooting is exactly how the sphere
/// measures nu_r are defined.
pub fn sphere_point(
    x: &ModelPoint,
    xi: &BoundaryDirection,
    r: f64,
) -> Result<SpherePoint, BoundaryError> {
    if !(r > 0.0) {
        return Err(BoundaryError::Geom(GeomError::InvariantViolation(format!(
            "sphere radius must be positive, got {r}"
        ))));
    }
    let ray = Geodesic::ray(x, xi)?;
    Ok(SpherePoint {
        point: ray.point_at(r),
        origin_direction: xi.clone(),
        radius: r,
    })
}

/// The geodesic joining the backward and forward limits of a bi-infinite
/// path, anchored at its closest point to `x`. Extends the stored halves as
/// needed, up to `max_steps`.
pub fn tracked_geodesic(
    bi: &mut BiInfinitePath,
    dist: &GroupDistribution,
    x: &ModelPoint,
    tol: f64,
    max_steps: usize,
) -> Result<Geodesic, BoundaryError> {
    let reflected = dist.reflect();
    let (backward, forward) = resolve_endpoint_pair(tol, |t| {
        let forward = limit_of_half(&mut bi.forward, dist, x, t, max_steps)?;
        let backward = limit_of_half(&mut bi.backward, &reflected, x, t, max_steps)?;
        Ok((backward, forward))
    })?;
    Ok(Geodesic::from_endpoints(&backward, &forward, x)?)
}

/// Compute an endpoint pair at tolerance `tol` and decide whether the two
/// limits are genuinely distinct. A gap below DEGENERACY_FACTOR * sqrt(tol)
/// is ambiguous (polynomially converging walks leave direction errors of
/// order sqrt(tol)), so the pair is recomputed at tighter tolerance until the
/// gap clears the shrinking threshold or the tolerance floor is hit. Running
/// out of steps during such a refinement also counts as degenerate: the
/// endpoints could not be separated at any achievable resolution.
fn resolve_endpoint_pair(
    tol: f64,
    mut compute: impl FnMut(f64) -> Result<(BoundaryDirection, BoundaryDirection), BoundaryError>,
) -> Result<(BoundaryDirection, BoundaryDirection), BoundaryError> {
    let mut t = tol.max(LIMIT_TOL_FLOOR);
    let mut last_gap = f64::NAN;
    loop {
        match compute(t) {
            Ok((a, b)) => {
                let gap = a.coord_gap(&b);
                if gap >= DEGENERACY_FACTOR * t.sqrt() {
                    return Ok((a, b));
                }
                last_gap = gap;
                if t <= LIMIT_TOL_FLOOR {
                    return Err(BoundaryError::DegenerateTracking { gap });
                }
                t = (t * t).max(LIMIT_TOL_FLOOR);
            }
            Err(BoundaryError::NonConvergence { .. }) if t < tol => {
                return Err(BoundaryError::DegenerateTracking { gap: last_gap });
            }
            Err(e) => return Err(e),
        }
    }
}

fn limit_of_half(
    path: &mut SamplePath,
    dist: &GroupDistribution,
    x: &ModelPoint,
    tol: f64,
    max_steps: usize,
) -> Result<BoundaryDirection, BoundaryError> {
    loop {
        match forward_limit(path, x, tol, max_steps) {
            Ok((dir, _, _)) => return Ok(dir),
            Err(BoundaryError::NonConvergence { .. }) if path.len() < max_steps => {
                let grow = (path.len().max(64)).min(max_steps - path.len());
                path.extend(dist, grow);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Convenience wrapper with the crate-default stopping rule.
pub fn default_tracked_geodesic(
    bi: &mut BiInfinitePath,
    dist: &GroupDistribution,
    x: &ModelPoint,
) -> Result<Geodesic, BoundaryError> {
    tracked_geodesic(bi, dist, x, LIMIT_TOL, LIMIT_MAX_STEPS)
}

/// Distances d(x_k, gamma_omega) for k = 0..=k_max, where gamma_omega is the
/// tracked geodesic of the bi-infinite path. Each distance is evaluated in
/// the frame recentered at k: the endpoints of w_k^-1 gamma_omega are fresh
/// boundary limits of the shifted sequences
///
///   forward:  g_{k+1}, g_{k+2}, ...
///   backward: g_k^-1, ..., g_1^-1, then the backward increments
///
/// so every quantity stays O(1) regardless of how far the walk has drifted.
/// The stored halves are extended in place as needed.
pub fn path_geodesic_distances(
    bi: &mut BiInfinitePath,
    dist: &GroupDistribution,
    x: &ModelPoint,
    k_max: usize,
    tol: f64,
    max_steps: usize,
) -> Result<Vec<f64>, BoundaryError> {
    let probe = LimitProbe::new(x)?;
    let reflected = dist.reflect();
    let inverses = dist.atom_inverses();
    let n = dist.dim();
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let (minus, plus) = resolve_endpoint_pair(tol, |t| {
            // forward endpoint of the recentered geodesic
            let mut product = ScaledProduct::identity(n);
            let mut plus = None;
            let mut last = f64::INFINITY;
            for j in 0..max_steps {
                let d = probe.diameter(&product);
                last = d;
                if d < t {
                    plus = Some(probe.direction(&product, x)?);
                    break;
                }
                while k + j >= bi.forward.len() {
                    bi.forward.extend(dist, 256);
                }
                let idx = bi.forward.increments[k + j];
                product.push(&dist.atoms()[idx].g);
            }
            let plus = plus.ok_or(BoundaryError::NonConvergence {
                steps: max_steps,
                diameter: last,
                tol: t,
            })?;
            // backward endpoint: reversed inverse prefix, then the backward half
            let mut product = ScaledProduct::identity(n);
            let mut minus = None;
            let mut last = f64::INFINITY;
            for j in 0..k + max_steps {
                let d = probe.diameter(&product);
                last = d;
                if d < t {
                    minus = Some(probe.direction(&product, x)?);
                    break;
                }
                if j < k {
                    let idx = bi.forward.increments[k - 1 - j];
                    product.push(&inverses[idx]);
                } else {
                    while j - k >= bi.backward.len() {
                        bi.backward.extend(&reflected, 256);
                    }
                    let idx = bi.backward.increments[j - k];
                    product.push(&reflected.atoms()[idx].g);
                }
            }
            let minus = minus.ok_or(BoundaryError::NonConvergence {
                steps: max_steps,
                diameter: last,
                tol: t,
            })?;
            Ok((minus, plus))
        })?;
        let gamma = Geodesic::from_endpoints(&minus, &plus, x)?;
        out.push(dist_to_geodesic(x, &gamma)?.0);
    }
    Ok(out)
}
