//! The one table of numeric tolerances and defaults used across the crate.

/// Core geometric tolerance: Minkowski-form invariants, distance identities,
/// isometry form preservation.
pub const GEOM_TOL: f64 = 1e-9;

/// Round-trip tolerance for the half-plane adapter.
pub const CONVERT_TOL: f64 = 1e-12;

/// Tolerance for boundary-limit identities (finite-t Gromov products against
/// the closed-form boundary product, asymptotic rays).
pub const BOUNDARY_TOL: f64 = 1e-6;

/// Accumulated form drift at which an isometry product is considered
/// numerically destroyed and must be re-orthogonalized upstream.
pub const DRIFT_BUDGET: f64 = 1e-6;

/// How often (in steps) walk products are repaired by B-Gram-Schmidt.
pub const ORTHO_INTERVAL: usize = 64;

/// Empirically validated four-point hyperbolicity constant for H^2.
pub const FOUR_POINT_DELTA: f64 = 1.1;

/// Thin-triangle neighbourhood constant for H^2 (log(1+sqrt 2) ~ 0.881 < 1).
pub const THIN_TRIANGLE_C: f64 = 1.0;

/// Default convergence tolerance for boundary-limit detection.
pub const LIMIT_TOL: f64 = 1e-9;

/// Default step cap for boundary-limit detection.
pub const LIMIT_MAX_STEPS: usize = 100_000;

/// Default grid step for thickness proportions along geodesic segments.
pub const THICKNESS_GRID: f64 = 0.01;

/// Default grid step on t for separation / thickness event checks.
pub const EVENT_GRID: f64 = 0.1;

/// Estimator failure budget: above this failure fraction the inputs are
/// treated as pathological and the estimator errors out.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Default truncation horizon multiplier for "for some m >= n" memberships.
pub const M_MAX_FACTOR: usize = 4;

/// Guard for the modular reduction loop.
pub const REDUCE_MAX_MOVES: usize = 10_000;

/// Two boundary limits computed at tolerance tol are treated as possibly
/// coincident when their gap is below this multiple of sqrt(tol); polynomial
/// (parabolic-type) convergence leaves direction errors of order sqrt(tol).
pub const DEGENERACY_FACTOR: f64 = 10.0;

/// Finest boundary-limit tolerance the ball-model coordinates can resolve:
/// at contraction depth d the radial coordinate carries absolute noise of
/// order e^d * eps while the diameter reads e^{-2d}, so diameters below
/// eps^(2/3) are unreachable.
pub const LIMIT_TOL_FLOOR: f64 = 4e-11;
