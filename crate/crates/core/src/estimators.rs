//! Monte Carlo estimators for the quantities the theory constrains: the
//! sphere-average statistic E(X), linear drift, recurrence frequencies,
//! thickness and separation probabilities, shadow-measure decay, and
//! exceptional-set rates, plus the tripod proximity check behind the
//! lower-bound mechanism.
//!
//! Every estimator is a deterministic function of its inputs and the master
//! seed: sample index i reads only from its own RNG substreams, work may fan
//! out across threads, and the reduction runs in fixed index order, so output
//! is bit-identical regardless of parallelism.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::boundary::{
    path_geodesic_distances, sample_harmonic, sphere_point, BoundaryError,
};
use crate::constants::{
    EVENT_GRID, LIMIT_MAX_STEPS, LIMIT_TOL, MAX_FAILURE_FRACTION, M_MAX_FACTOR, THICKNESS_GRID,
};
use crate::geom::{
    dist_to_geodesic, distance, BoundaryDirection, Geodesic, GeomError, ModelPoint,
};
use crate::lattice::{LatticeError, ThinOracle};
use crate::walk::{sample_bi_infinite, GroupDistribution, RngSpec, WalkError, Walker};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid estimator parameter: {0}")]
    BadParameter(String),
    #[error("{failures} of {total} samples failed to converge; inputs look pathological")]
    TooManyFailures { failures: usize, total: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

type Result<T> = std::result::Result<T, EstimatorError>;

/// Mean and standard error of one Monte Carlo quantity. Non-convergent
/// samples are excluded from the mean and reported in `n_failures`; the
/// estimate is conditional on success.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub n_failures: usize,
    pub seed: u64,
}

/// E-estimates over a strictly increasing list of radii.
#[derive(Debug, Clone, Serialize)]
pub struct ECurve {
    pub entries: Vec<(f64, MonteCarloEstimate)>,
}

/// Law of the boundary directions fed to sphere measures: the harmonic
/// measure of a walk, or the uniform-angle control measure on the circle
/// (the Lebesgue comparison mode, n = 2 only).
#[derive(Debug, Clone)]
pub enum BoundaryLaw {
    Harmonic(GroupDistribution),
    UniformAngle,
}

impl BoundaryLaw {
    fn check_dim(&self, x: &ModelPoint) -> Result<()> {
        match self {
            BoundaryLaw::Harmonic(dist) => {
                if dist.dim() != x.dim() {
                    return Err(EstimatorError::Geom(GeomError::DimensionMismatch(
                        dist.dim(),
                        x.dim(),
                    )));
                }
            }
            BoundaryLaw::UniformAngle => {
                if x.dim() != 2 {
                    return Err(EstimatorError::BadParameter(
                        "uniform-angle control measure requires n = 2".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// One boundary direction from substream `index`.
    pub fn draw(
        &self,
        x: &ModelPoint,
        rng: &RngSpec,
        index: u64,
    ) -> std::result::Result<BoundaryDirection, BoundaryError> {
        match self {
            BoundaryLaw::Harmonic(dist) => {
                Ok(sample_harmonic(dist, x, rng, index, LIMIT_TOL, LIMIT_MAX_STEPS)?.direction)
            }
            BoundaryLaw::UniformAngle => {
                let mut r = rng.substream(index);
                let phi = r.random::<f64>() * std::f64::consts::TAU;
                Ok(BoundaryDirection::from_angle(phi))
            }
        }
    }
}

/// sin(theta/2) for the visual angle theta at x between two boundary
/// directions; exactly zero for coincident directions.
pub fn pair_half_angle_sine(
    x: &ModelPoint,
    xi: &BoundaryDirection,
    eta: &BoundaryDirection,
) -> std::result::Result<f64, GeomError> {
    if xi.coord_gap(eta) == 0.0 {
        return Ok(0.0);
    }
    let u = Geodesic::ray(x, xi)?;
    let v = Geodesic::ray(x, eta)?;
    let c = crate::geom::minkowski_dot(u.tangent().as_slice(), v.tangent().as_slice());
    Ok(((1.0 - c) / 2.0).max(0.0).sqrt())
}

/// d(gamma_xi(t), gamma_eta(t)) for two rays from a common base point, from
/// the half-angle sine s: 2 arcsinh(sinh t * s). The direct Minkowski form
/// between the two sphere points cancels catastrophically at large t (terms
/// e^{2t} against an O(1) answer); this form never does.
pub fn sphere_pair_distance(s: f64, t: f64) -> f64 {
    2.0 * (t.sinh() * s).asinh()
}

enum Outcome<T> {
    Good(T),
    Failed,
}

/// Downgrade non-convergence and degenerate tracking to per-sample failures;
/// anything else is a hard error.
fn soft<T>(r: std::result::Result<T, BoundaryError>) -> Result<Outcome<T>> {
    match r {
        Ok(t) => Ok(Outcome::Good(t)),
        Err(BoundaryError::NonConvergence { .. }) | Err(BoundaryError::DegenerateTracking { .. }) => {
            Ok(Outcome::Failed)
        }
        Err(e) => Err(e.into()),
    }
}

macro_rules! try_sample {
    ($e:expr) => {
        match soft($e)? {
            Outcome::Good(v) => v,
            Outcome::Failed => return Ok(Outcome::Failed),
        }
    };
}

/// Fan N independent sample indices across threads and reduce in index
/// order. Enforces the failure budget.
fn par_samples<T: Send>(
    n: usize,
    f: impl Fn(u64) -> Result<Outcome<T>> + Sync + Send,
) -> Result<(Vec<T>, usize)> {
    let raw: Vec<Result<Outcome<T>>> = (0..n as u64).into_par_iter().map(f).collect();
    let mut values = Vec::with_capacity(n);
    let mut failures = 0;
    for r in raw {
        match r? {
            Outcome::Good(v) => values.push(v),
            Outcome::Failed => failures += 1,
        }
    }
    check_failure_budget(failures, n)?;
    Ok((values, failures))
}

fn check_failure_budget(failures: usize, total: usize) -> Result<()> {
    if failures as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(EstimatorError::TooManyFailures { failures, total });
    }
    Ok(())
}

/// Two-pass mean and stderr in fixed order.
fn summarize(values: &[f64], n_failures: usize, seed: u64) -> MonteCarloEstimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n >= 2 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MonteCarloEstimate { mean, stderr, n_samples: n, n_failures, seed }
}

fn grid_count(len: f64, delta: f64) -> usize {
    (len / delta + 1e-9).floor() as usize
}

/// Estimate E at every radius from N coupled pairs: pair i draws two
/// independent boundary directions from substreams 2i and 2i+1, and the same
/// pair is reused across radii (couples the curve, reduces variance).
pub fn estimate_e_curve(
    law: &BoundaryLaw,
    x: &ModelPoint,
    radii: &[f64],
    n_pairs: usize,
    rng: &RngSpec,
) -> Result<ECurve> {
    law.check_dim(x)?;
    if radii.is_empty() {
        return Err(EstimatorError::BadParameter("radii must be nonempty".into()));
    }
    if !radii.windows(2).all(|w| w[0] < w[1]) || radii[0] <= 0.0 {
        return Err(EstimatorError::BadParameter(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    if n_pairs < 2 {
        return Err(EstimatorError::BadParameter("need at least 2 pairs".into()));
    }
    let (sines, n_failures) = par_samples(n_pairs, |i| {
        let xi = try_sample!(law.draw(x, rng, 2 * i));
        let eta = try_sample!(law.draw(x, rng, 2 * i + 1));
        Ok(Outcome::Good(pair_half_angle_sine(x, &xi, &eta)?))
    })?;
    let entries = radii
        .iter()
        .map(|&r| {
            let values: Vec<f64> =
                sines.iter().map(|&s| sphere_pair_distance(s, r) / r).collect();
            (r, summarize(&values, n_failures, rng.master_seed))
        })
        .collect();
    Ok(ECurve { entries })
}

/// Single-radius E estimate.
pub fn estimate_e(
    law: &BoundaryLaw,
    x: &ModelPoint,
    r: f64,
    n_pairs: usize,
    rng: &RngSpec,
) -> Result<MonteCarloEstimate> {
    let curve = estimate_e_curve(law, x, &[r], n_pairs, rng)?;
    Ok(curve.entries.into_iter().next().unwrap().1)
}

/// Mean of d(x, w_n x) / n over N independent n-step walks.
pub fn estimate_drift(
    dist: &GroupDistribution,
    x: &ModelPoint,
    n: usize,
    n_samples: usize,
    rng: &RngSpec,
) -> Result<MonteCarloEstimate> {
    if n == 0 {
        return Err(EstimatorError::BadParameter("walk length must be positive".into()));
    }
    if n_samples == 0 {
        return Err(EstimatorError::BadParameter("need at least 1 sample".into()));
    }
    let (values, n_failures) = par_samples(n_samples, |i| {
        let mut walker = Walker::new(dist, rng.substream(i));
        for _ in 0..n {
            walker.step();
        }
        Ok(Outcome::Good(walker.product().displacement(x) / n as f64))
    })?;
    Ok(summarize(&values, n_failures, rng.master_seed))
}

/// Per-path frequency of R-recurrence times among k = 0..=n, and the
/// fraction of paths starting in Lambda_R (d(x_0, gamma_omega) < R/3).
pub fn recurrence_frequency(
    dist: &GroupDistribution,
    x: &ModelPoint,
    big_r: f64,
    n: usize,
    n_samples: usize,
    rng: &RngSpec,
) -> Result<(MonteCarloEstimate, MonteCarloEstimate)> {
    if !(big_r > 0.0) {
        return Err(EstimatorError::BadParameter("R must be positive".into()));
    }
    let (values, n_failures) = par_samples(n_samples, |i| {
        let mut bi = sample_bi_infinite(dist, n.max(1), rng, i);
        let dists = try_sample!(path_geodesic_distances(
            &mut bi,
            dist,
            x,
            n,
            LIMIT_TOL,
            LIMIT_MAX_STEPS
        ));
        let hits = dists.iter().filter(|&&d| d < big_r / 3.0).count();
        let freq = hits as f64 / dists.len() as f64;
        let lam = if dists[0] < big_r / 3.0 { 1.0 } else { 0.0 };
        Ok(Outcome::Good((freq, lam)))
    })?;
    let freqs: Vec<f64> = values.iter().map(|v| v.0).collect();
    let lams: Vec<f64> = values.iter().map(|v| v.1).collect();
    Ok((
        summarize(&freqs, n_failures, rng.master_seed),
        summarize(&lams, n_failures, rng.master_seed),
    ))
}

/// Probability that a coupled pair of rays stays M-separated at every grid
/// time t in [eta r, r]. The map t -> d(x'_t, x''_t) is 2-Lipschitz, so the
/// grid misclassifies only pairs within 2 delta of the threshold.
pub fn separation_probability(
    dist: &GroupDistribution,
    x: &ModelPoint,
    m_sep: f64,
    eta: f64,
    r: f64,
    n_pairs: usize,
    delta: f64,
    rng: &RngSpec,
) -> Result<MonteCarloEstimate> {
    if m_sep < 0.0 {
        return Err(EstimatorError::BadParameter("M must be nonnegative".into()));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(EstimatorError::BadParameter("eta must lie in (0,1)".into()));
    }
    if !(r > 0.0) || !(delta > 0.0) {
        return Err(EstimatorError::BadParameter("r and delta must be positive".into()));
    }
    let law = BoundaryLaw::Harmonic(dist.clone());
    let (values, n_failures) = par_samples(n_pairs, |i| {
        let xi = try_sample!(law.draw(x, rng, 2 * i));
        let eta_dir = try_sample!(law.draw(x, rng, 2 * i + 1));
        let s = pair_half_angle_sine(x, &xi, &eta_dir)?;
        let t0 = eta * r;
        let m = grid_count(r - t0, delta);
        let ok = (0..=m).all(|j| sphere_pair_distance(s, t0 + j as f64 * delta) >= m_sep);
        Ok(Outcome::Good(if ok { 1.0 } else { 0.0 }))
    })?;
    Ok(summarize(&values, n_failures, rng.master_seed))
}

/// Thickness event for one ray: thick%([x, x'_t]) >= theta at every event
/// grid time t in [eta r, r]. Thick flags are computed once on the fine grid
/// and prefix-summed, which matches evaluating thickness_proportion on each
/// initial segment.
fn thickness_event(
    ray: &Geodesic,
    oracle: &ThinOracle,
    theta: f64,
    eta: f64,
    r: f64,
) -> std::result::Result<bool, LatticeError> {
    let jmax = grid_count(r, THICKNESS_GRID);
    let mut prefix = Vec::with_capacity(jmax + 1);
    let mut acc = 0usize;
    for j in 0..=jmax {
        let p = ray.point_at(j as f64 * THICKNESS_GRID);
        if oracle.is_thick(&p)? {
            acc += 1;
        }
        prefix.push(acc);
    }
    let t0 = eta * r;
    let imax = grid_count(r - t0, EVENT_GRID);
    for i in 0..=imax {
        let t = t0 + i as f64 * EVENT_GRID;
        let j = grid_count(t, THICKNESS_GRID);
        if (prefix[j] as f64) / ((j + 1) as f64) < theta {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Probability that a harmonic ray satisfies the thickness event.
pub fn thickness_probability(
    dist: &GroupDistribution,
    x: &ModelPoint,
    oracle: &ThinOracle,
    theta: f64,
    eta: f64,
    r: f64,
    n_samples: usize,
    rng: &RngSpec,
) -> Result<MonteCarloEstimate> {
    if !(theta > 0.0 && theta < 1.0) || !(eta > 0.0 && eta < 1.0) {
        return Err(EstimatorError::BadParameter("theta and eta must lie in (0,1)".into()));
    }
    if !(r > 0.0) {
        return Err(EstimatorError::BadParameter("r must be positive".into()));
    }
    let law = BoundaryLaw::Harmonic(dist.clone());
    let (values, n_failures) = par_samples(n_samples, |i| {
        let xi = try_sample!(law.draw(x, rng, i));
        let ray = Geodesic::ray(x, &xi)?;
        let ok = thickness_event(&ray, oracle, theta, eta, r)?;
        Ok(Outcome::Good(if ok { 1.0 } else { 0.0 }))
    })?;
    Ok(summarize(&values, n_failures, rng.master_seed))
}

/// For each center distance d: the maximum, over N_dir harmonic centers y at
/// distance d, of the estimated harmonic mass of shad_x(y, tau). One shared
/// pool of N_boundary fresh directions serves every center and distance.
pub fn shadow_decay(
    dist: &GroupDistribution,
    x: &ModelPoint,
    distances: &[f64],
    tau: f64,
    n_dir: usize,
    n_boundary: usize,
    rng: &RngSpec,
) -> Result<Vec<(f64, MonteCarloEstimate)>> {
    if tau < 0.0 {
        return Err(EstimatorError::BadParameter("tau must be nonnegative".into()));
    }
    if distances.is_empty() || distances[0] <= 0.0 || !distances.windows(2).all(|w| w[0] < w[1]) {
        return Err(EstimatorError::BadParameter(
            "distances must be positive and strictly increasing".into(),
        ));
    }
    if n_dir == 0 || n_boundary < 2 {
        return Err(EstimatorError::BadParameter(
            "need at least 1 center and 2 boundary samples".into(),
        ));
    }
    let law = BoundaryLaw::Harmonic(dist.clone());
    let total = n_dir + n_boundary;
    let raw: Vec<Result<Outcome<BoundaryDirection>>> = (0..total as u64)
        .into_par_iter()
        .map(|i| soft(law.draw(x, rng, i)))
        .collect();
    let mut centers = Vec::new();
    let mut pool = Vec::new();
    let mut failures = 0;
    for (i, r) in raw.into_iter().enumerate() {
        match r? {
            Outcome::Good(d) => {
                if i < n_dir {
                    centers.push(d);
                } else {
                    pool.push(d);
                }
            }
            Outcome::Failed => failures += 1,
        }
    }
    check_failure_budget(failures, total)?;
    if centers.is_empty() || pool.len() < 2 {
        return Err(EstimatorError::TooManyFailures { failures, total });
    }
    let mut out = Vec::with_capacity(distances.len());
    for &d in distances {
        let mut max_mass = 0.0f64;
        for dir in &centers {
            let y = sphere_point(x, dir, d)?;
            let mut hits = 0usize;
            for xi in &pool {
                if crate::geom::in_shadow(x, &y.point, tau, xi)? {
                    hits += 1;
                }
            }
            max_mass = max_mass.max(hits as f64 / pool.len() as f64);
        }
        let stderr = (max_mass * (1.0 - max_mass) / pool.len() as f64).sqrt();
        out.push((
            d,
            MonteCarloEstimate {
                mean: max_mass,
                stderr,
                n_samples: pool.len(),
                n_failures: failures,
                seed: rng.master_seed,
            },
        ));
    }
    Ok(out)
}

/// Parameters of the exceptional-set memberships. The "for some m >= n"
/// quantifier is truncated at m_max (default 4n), which under-counts
/// membership and is therefore conservative.
#[derive(Debug, Clone, Serialize)]
pub struct ExceptionConfig {
    pub n: usize,
    pub big_r: f64,
    pub p: f64,
    pub rho: f64,
    pub d_cut: f64,
    pub c: f64,
    pub a_hat: f64,
    pub a: f64,
    pub m_max: usize,
}

impl ExceptionConfig {
    /// Config with the default truncation horizon m_max = 4n.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        big_r: f64,
        p: f64,
        rho: f64,
        d_cut: f64,
        c: f64,
        a_hat: f64,
        a: f64,
    ) -> Self {
        Self { n, big_r, p, rho, d_cut, c, a_hat, a, m_max: M_MAX_FACTOR * n }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < self.p && self.p < 1.0) {
            return Err(EstimatorError::BadParameter("need 0 < rho < p < 1".into()));
        }
        if !(self.d_cut > 0.0) || !(self.c > 0.0) || !(self.big_r > 0.0) {
            return Err(EstimatorError::BadParameter("D, c, R must be positive".into()));
        }
        if !(self.a > 0.0 && self.a < self.a_hat) {
            return Err(EstimatorError::BadParameter("need 0 < a < A_hat".into()));
        }
        if self.n == 0 || self.n > self.m_max {
            return Err(EstimatorError::BadParameter("need 1 <= n <= m_max".into()));
        }
        Ok(())
    }
}

/// Estimated membership rates of the three exceptional sets.
#[derive(Debug, Clone, Serialize)]
pub struct ExceptionRates {
    pub e1: MonteCarloEstimate,
    pub e2: MonteCarloEstimate,
    pub e3: MonteCarloEstimate,
}

/// Per path, with m ranging over [n, m_max]:
///
/// * E^(1): the running frequency of R-recurrence times drops below p - rho,
/// * E^(2): the running mean of b_i^D = d(x, g_i x) 1[d > D] exceeds C + c,
///   with C the exact expectation over the finite distribution,
/// * E^(3): d(x_0, x_m) leaves the window ((A_hat - a) m, (A_hat + a) m).
pub fn exception_rates(
    dist: &GroupDistribution,
    x: &ModelPoint,
    cfg: &ExceptionConfig,
    n_samples: usize,
    rng: &RngSpec,
) -> Result<ExceptionRates> {
    cfg.validate()?;
    let lengths = dist.step_lengths(x)?;
    let big_c: f64 = dist
        .atoms()
        .iter()
        .zip(&lengths)
        .map(|(a, &l)| if l > cfg.d_cut { a.weight * l } else { 0.0 })
        .sum();
    let (values, n_failures) = par_samples(n_samples, |i| {
        let mut bi = sample_bi_infinite(dist, cfg.m_max, rng, i);
        let dists = try_sample!(path_geodesic_distances(
            &mut bi,
            dist,
            x,
            cfg.m_max,
            LIMIT_TOL,
            LIMIT_MAX_STEPS
        ));
        let mut e1 = false;
        let mut e2 = false;
        let mut e3 = false;
        let mut recur = 0usize;
        let mut bsum = 0.0f64;
        for m in 1..=cfg.m_max {
            if dists[m] < cfg.big_r / 3.0 {
                recur += 1;
            }
            let l = lengths[bi.forward.increments[m - 1]];
            if l > cfg.d_cut {
                bsum += l;
            }
            if m >= cfg.n {
                let mf = m as f64;
                if (recur as f64) / mf < cfg.p - cfg.rho {
                    e1 = true;
                }
                if bsum / mf > big_c + cfg.c {
                    e2 = true;
                }
                let disp = bi.forward.products[m].displacement(x);
                if !(disp > (cfg.a_hat - cfg.a) * mf && disp < (cfg.a_hat + cfg.a) * mf) {
                    e3 = true;
                }
            }
        }
        Ok(Outcome::Good([e1 as u8 as f64, e2 as u8 as f64, e3 as u8 as f64]))
    })?;
    let col = |j: usize| -> Vec<f64> { values.iter().map(|v| v[j]).collect() };
    Ok(ExceptionRates {
        e1: summarize(&col(0), n_failures, rng.master_seed),
        e2: summarize(&col(1), n_failures, rng.master_seed),
        e3: summarize(&col(2), n_failures, rng.master_seed),
    })
}

/// Distance from p to the segment [a, b]: the geodesic foot if it lands
/// inside the segment, otherwise the nearer endpoint.
fn dist_to_segment(
    p: &ModelPoint,
    a: &ModelPoint,
    b: &ModelPoint,
) -> std::result::Result<f64, GeomError> {
    let l = distance(a, b)?;
    if l <= 1e-12 {
        return distance(p, a);
    }
    let g = Geodesic::between(a, b)?;
    let (d, t) = dist_to_geodesic(p, &g)?;
    if t <= 0.0 {
        distance(p, a)
    } else if t >= l {
        distance(p, b)
    } else {
        Ok(d)
    }
}

/// True iff every grid point of [x, x1] lies within C of [x, x2] union
/// [x1, x2]: the thin-triangle (tripod) proximity check.
pub fn tripod_check(
    x: &ModelPoint,
    x1: &ModelPoint,
    x2: &ModelPoint,
    big_c: f64,
    delta: f64,
) -> std::result::Result<bool, GeomError> {
    let len = distance(x, x1)?;
    if len <= 1e-12 {
        return Ok(true);
    }
    let side = Geodesic::between(x, x1)?;
    let m = grid_count(len, delta);
    for j in 0..=m {
        let p = side.point_at(j as f64 * delta);
        let d = dist_to_segment(&p, x, x2)?.min(dist_to_segment(&p, x1, x2)?);
        if d > big_c {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Outcome of the lower-bound mechanism check at one radius.
#[derive(Debug, Clone, Serialize)]
pub struct MechanismReport {
    pub n_pairs: usize,
    pub n_eligible: usize,
    pub n_violations: usize,
    pub n_failures: usize,
    /// The asserted lower bound (2 - 4 eta) r - 2C.
    pub bound: f64,
}

/// For each sampled pair: if the pair passes the separation event with
/// M = 3C, both rays pass the thickness event, and every grid point of the
/// sub-segment I = [x'_{eta r}, x'_{2 eta r}] lies within C of the other two
/// sides, then d(x', x'') must be at least (2 - 4 eta) r - 2C.
///
/// The side distances are evaluated against the ray [x, x''] (foot clamped
/// to [0, r]) and the bi-infinite geodesic through the two limit directions
/// anchored near x; the raw segment [x', x''] has endpoint coordinates of
/// size e^r, far past the cancellation budget of the distance form, while
/// the anchored geodesic agrees with it near I up to e^{-(r - (xi,eta)_x)}.
#[allow(clippy::too_many_arguments)]
pub fn mechanism_check(
    dist: &GroupDistribution,
    x: &ModelPoint,
    oracle: &ThinOracle,
    r: f64,
    eta: f64,
    big_c: f64,
    theta: f64,
    n_pairs: usize,
    rng: &RngSpec,
) -> Result<MechanismReport> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(EstimatorError::BadParameter("eta must lie in (0, 1/2)".into()));
    }
    if !(r > 0.0) || !(big_c > 0.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(EstimatorError::BadParameter(
            "r, C must be positive and theta must lie in (0,1)".into(),
        ));
    }
    let law = BoundaryLaw::Harmonic(dist.clone());
    let bound = (2.0 - 4.0 * eta) * r - 2.0 * big_c;
    let (values, n_failures) = par_samples(n_pairs, |i| {
        let xi = try_sample!(law.draw(x, rng, 2 * i));
        let eta_dir = try_sample!(law.draw(x, rng, 2 * i + 1));
        let s = pair_half_angle_sine(x, &xi, &eta_dir)?;
        // separation gate, M = 3C on the event grid
        let t0 = eta * r;
        let m = grid_count(r - t0, EVENT_GRID);
        let separated =
            (0..=m).all(|j| sphere_pair_distance(s, t0 + j as f64 * EVENT_GRID) >= 3.0 * big_c);
        if !separated {
            return Ok(Outcome::Good((false, false)));
        }
        // thickness gate on both rays
        let ray_xi = Geodesic::ray(x, &xi)?;
        let ray_eta = Geodesic::ray(x, &eta_dir)?;
        if !thickness_event(&ray_xi, oracle, theta, eta, r)?
            || !thickness_event(&ray_eta, oracle, theta, eta, r)?
        {
            return Ok(Outcome::Good((false, false)));
        }
        // tripod gate along I = [x'_{eta r}, x'_{2 eta r}]
        let opposite = Geodesic::from_endpoints(&xi, &eta_dir, x)?;
        let x2 = ray_eta.point_at(r);
        let mi = grid_count(eta * r, EVENT_GRID);
        let mut near = true;
        for j in 0..=mi {
            let y = ray_xi.point_at(t0 + j as f64 * EVENT_GRID);
            let (d1g, t1) = dist_to_geodesic(&y, &ray_eta)?;
            let d1 = if t1 <= 0.0 {
                distance(&y, x)?
            } else if t1 >= r {
                distance(&y, &x2)?
            } else {
                d1g
            };
            let d2 = dist_to_geodesic(&y, &opposite)?.0;
            if d1.min(d2) > big_c {
                near = false;
                break;
            }
        }
        if !near {
            return Ok(Outcome::Good((false, false)));
        }
        let violated = sphere_pair_distance(s, r) < bound;
        Ok(Outcome::Good((true, violated)))
    })?;
    let n_eligible = values.iter().filter(|v| v.0).count();
    let n_violations = values.iter().filter(|v| v.1).count();
    Ok(MechanismReport { n_pairs, n_eligible, n_violations, n_failures, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{gromov_product_boundary, HalfPlanePoint};
    use approx::assert_relative_eq;

    fn base() -> ModelPoint {
        ModelPoint::base(2)
    }

    fn psl2z() -> GroupDistribution {
        GroupDistribution::builtin("psl2z-uniform-TTS").unwrap()
    }

    #[test]
    fn atomic_pairs_give_exact_zero() {
        let law = BoundaryLaw::Harmonic(GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap());
        let curve = estimate_e_curve(&law, &base(), &[5.0, 40.0], 20, &RngSpec::new(7)).unwrap();
        for (_, est) in &curve.entries {
            assert_eq!(est.mean, 0.0);
            assert_eq!(est.stderr, 0.0);
            assert_eq!(est.n_failures, 0);
        }
    }

    /// Numeric double-integral oracle for the uniform-angle law: the angle
    /// difference of two independent uniform angles is uniform, so
    /// E = (1/pi) int_0^pi 2 arcsinh(sinh r sin(psi/2)) dpsi / r.
    fn uniform_angle_oracle(r: f64) -> f64 {
        let n = 20_000usize;
        let h = std::f64::consts::PI / n as f64;
        let f = |psi: f64| 2.0 * (r.sinh() * (psi / 2.0).sin()).asinh() / r;
        let mut acc = f(0.0) + f(std::f64::consts::PI);
        for j in 1..n {
            acc += f(j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0 / std::f64::consts::PI
    }

    #[test]
    fn uniform_angle_matches_closed_form_anchor() {
        let law = BoundaryLaw::UniformAngle;
        let est = estimate_e(&law, &base(), 20.0, 4000, &RngSpec::new(11)).unwrap();
        let oracle = uniform_angle_oracle(20.0);
        let anchor = 2.0 - 2.0 * std::f64::consts::LN_2 / 20.0;
        // the finite-r oracle and the asymptotic anchor agree to O(1/r^2)-ish
        assert!((oracle - anchor).abs() < 5e-3, "oracle {oracle} vs anchor {anchor}");
        assert!(
            (est.mean - oracle).abs() < 3.0 * est.stderr,
            "mean {} oracle {} stderr {}",
            est.mean,
            oracle,
            est.stderr
        );
    }

    #[test]
    fn coupled_curve_identity_and_monotonicity() {
        let law = BoundaryLaw::UniformAngle;
        let x = base();
        let rng = RngSpec::new(3);
        let n = 200u64;
        let mut gp_sum = 0.0;
        let mut per_sample = Vec::new();
        for i in 0..n {
            let xi = law.draw(&x, &rng, 2 * i).unwrap();
            let eta = law.draw(&x, &rng, 2 * i + 1).unwrap();
            let s = pair_half_angle_sine(&x, &xi, &eta).unwrap();
            gp_sum += gromov_product_boundary(&x, &xi, &eta).unwrap();
            per_sample.push(s);
        }
        let curve = estimate_e_curve(&law, &x, &[10.0, 20.0, 40.0], n as usize, &rng).unwrap();
        // identity E(r) = 2 - (2/r) mean (xi,eta)_x + o(1/r) at r = 40
        let e40 = curve.entries[2].1.mean;
        let predicted = 2.0 - 2.0 * (gp_sum / n as f64) / 40.0;
        assert!((e40 - predicted).abs() < 1e-3, "e40 {e40} predicted {predicted}");
        // per-sample d(r)/r is non-decreasing in r
        for &s in &per_sample {
            let mut prev = f64::NEG_INFINITY;
            for &r in &[10.0, 20.0, 40.0] {
                let v = sphere_pair_distance(s, r) / r;
                assert!(v >= prev - 1e-3);
                prev = v;
            }
        }
        // mean Gromov product of uniform angles is log 2
        let se = 1.3 / (n as f64).sqrt();
        assert!((gp_sum / n as f64 - std::f64::consts::LN_2).abs() < 4.0 * se);
    }

    #[test]
    fn psl2z_e_estimate_sane() {
        let law = BoundaryLaw::Harmonic(psl2z());
        let curve = estimate_e_curve(&law, &base(), &[5.0, 10.0], 200, &RngSpec::new(5)).unwrap();
        let e5 = &curve.entries[0].1;
        let e10 = &curve.entries[1].1;
        assert!(e5.mean > 1.0 && e5.mean < 2.0, "E(5) = {}", e5.mean);
        assert!(e10.mean > e5.mean - 2.0 * (e5.stderr + e10.stderr));
        assert_eq!(e5.n_failures, 0);
    }

    #[test]
    fn drift_translation_is_exact() {
        let mu = GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap();
        let est = estimate_drift(&mu, &base(), 50, 4, &RngSpec::new(0)).unwrap();
        assert_relative_eq!(est.mean, 1.0, epsilon = 1e-9);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn drift_parabolic_closed_form() {
        let mu = GroupDistribution::builtin("parabolic-pointmass").unwrap();
        let n = 1000.0f64;
        let est = estimate_drift(&mu, &base(), 1000, 2, &RngSpec::new(0)).unwrap();
        let oracle = (1.0 + n * n / 2.0).acosh() / n;
        assert_relative_eq!(est.mean, oracle, epsilon = 1e-9);
        assert!(est.mean < 0.02);
    }

    #[test]
    fn drift_psl2z_positive() {
        let est = estimate_drift(&psl2z(), &base(), 300, 50, &RngSpec::new(1)).unwrap();
        assert!(est.mean > 5.0 * est.stderr, "mean {} stderr {}", est.mean, est.stderr);
        assert!(est.mean > 0.05 && est.mean < 0.7);
    }

    #[test]
    fn recurrence_on_axis_is_total() {
        let mu = GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap();
        let (freq, lam) = recurrence_frequency(&mu, &base(), 1.0, 20, 5, &RngSpec::new(2)).unwrap();
        assert_eq!(freq.mean, 1.0);
        assert_eq!(lam.mean, 1.0);
    }

    #[test]
    fn recurrence_off_axis_small_r_is_zero() {
        let mu = GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap();
        let x = HalfPlanePoint::new(0.7, 1.0).unwrap().to_model();
        // d(x, axis) = arcsinh(0.7) ~ 0.652 > R/3
        let (freq, lam) = recurrence_frequency(&mu, &x, 0.3, 20, 5, &RngSpec::new(2)).unwrap();
        assert_eq!(freq.mean, 0.0);
        assert_eq!(lam.mean, 0.0);
    }

    #[test]
    fn recurrence_degenerate_tracking_exhausts_budget() {
        let mu = GroupDistribution::builtin("parabolic-pointmass").unwrap();
        let err = recurrence_frequency(&mu, &base(), 1.0, 10, 4, &RngSpec::new(0)).unwrap_err();
        assert!(matches!(err, EstimatorError::TooManyFailures { .. }), "{err}");
    }

    #[test]
    fn recurrence_psl2z_lambda_grows_with_r() {
        let x = base();
        let rng = RngSpec::new(4);
        let (_, lam1) = recurrence_frequency(&psl2z(), &x, 1.0, 30, 60, &rng).unwrap();
        let (_, lam9) = recurrence_frequency(&psl2z(), &x, 9.0, 30, 60, &rng).unwrap();
        assert!(lam9.mean >= lam1.mean - 2.0 * (lam1.stderr + lam9.stderr));
        assert!(lam9.mean >= 0.7, "lambda_9 = {}", lam9.mean);
    }

    #[test]
    fn separation_trivial_cases() {
        let x = base();
        let rng = RngSpec::new(6);
        let est = separation_probability(&psl2z(), &x, 0.0, 0.2, 10.0, 40, 0.1, &rng).unwrap();
        assert_eq!(est.mean, 1.0);
        let atomic = GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap();
        let est = separation_probability(&atomic, &x, 1.0, 0.2, 10.0, 10, 0.1, &rng).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn separation_psl2z_grows_with_r() {
        let x = base();
        let rng = RngSpec::new(8);
        let e10 = separation_probability(&psl2z(), &x, 3.0, 0.2, 10.0, 80, 0.1, &rng).unwrap();
        let e20 = separation_probability(&psl2z(), &x, 3.0, 0.2, 20.0, 80, 0.1, &rng).unwrap();
        assert!(e20.mean >= e10.mean - 2.0 * (e10.stderr + e20.stderr));
    }

    #[test]
    fn thickness_all_thick_oracle() {
        let est = thickness_probability(
            &psl2z(),
            &base(),
            &ThinOracle::AllThick,
            0.9,
            0.2,
            10.0,
            10,
            &RngSpec::new(0),
        )
        .unwrap();
        assert_eq!(est.mean, 1.0);
    }

    #[test]
    fn thickness_parabolic_ray_climbs_cusp() {
        let mu = GroupDistribution::builtin("parabolic-pointmass").unwrap();
        let est = thickness_probability(
            &mu,
            &base(),
            &ThinOracle::ModularCusp { h: 2.0 },
            0.5,
            0.2,
            40.0,
            3,
            &RngSpec::new(0),
        )
        .unwrap();
        // ray from i to infinity: im = e^t, thick fraction of [0,t] ~ ln(2)/t
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn thickness_event_matches_proportion() {
        let law = BoundaryLaw::Harmonic(psl2z());
        let x = base();
        let xi = law.draw(&x, &RngSpec::new(9), 0).unwrap();
        let ray = Geodesic::ray(&x, &xi).unwrap();
        let oracle = ThinOracle::ModularCusp { h: 2.0 };
        let r = 5.0;
        let eta = 0.2;
        for theta in [0.3, 0.6, 0.9] {
            let fast = thickness_event(&ray, &oracle, theta, eta, r).unwrap();
            let imax = grid_count(r - eta * r, EVENT_GRID);
            let slow = (0..=imax).all(|i| {
                let t = eta * r + i as f64 * EVENT_GRID;
                crate::lattice::thickness_proportion(&ray, 0.0, t, &oracle, THICKNESS_GRID)
                    .unwrap()
                    >= theta
            });
            assert_eq!(fast, slow, "theta {theta}");
        }
    }

    #[test]
    fn shadow_tau_dominates_distance() {
        let out = shadow_decay(&psl2z(), &base(), &[3.0], 5.0, 5, 50, &RngSpec::new(0)).unwrap();
        assert_eq!(out[0].1.mean, 1.0);
    }

    #[test]
    fn shadow_mass_decays_with_distance() {
        let out =
            shadow_decay(&psl2z(), &base(), &[3.0, 8.0], 2.0, 5, 400, &RngSpec::new(1)).unwrap();
        let (m3, m8) = (&out[0].1, &out[1].1);
        assert!(m8.mean <= m3.mean + 2.0 * (m3.stderr + m8.stderr));
        assert!(m3.mean > 0.0 && m3.mean <= 1.0);
    }

    #[test]
    fn exception_trivial_fixture_rates_are_zero() {
        let mu = GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap();
        // translation length 1, drift window (0.5, 1.5), D above the step
        let cfg = ExceptionConfig::new(20, 9.0, 0.5, 0.2, 2.0, 0.3, 1.0, 0.5);
        let rates = exception_rates(&mu, &base(), &cfg, 10, &RngSpec::new(0)).unwrap();
        assert_eq!(rates.e1.mean, 0.0);
        assert_eq!(rates.e2.mean, 0.0);
        assert_eq!(rates.e3.mean, 0.0);
    }

    #[test]
    fn exception_psl2z_rates_are_probabilities() {
        let a_hat = estimate_drift(&psl2z(), &base(), 300, 20, &RngSpec::new(1)).unwrap().mean;
        let cfg = ExceptionConfig::new(30, 9.0, 0.5, 0.2, 0.5, 0.3, a_hat, 0.5 * a_hat);
        let rates = exception_rates(&psl2z(), &base(), &cfg, 30, &RngSpec::new(2)).unwrap();
        for e in [&rates.e1, &rates.e2, &rates.e3] {
            assert!((0.0..=1.0).contains(&e.mean));
            assert_eq!(e.n_samples + e.n_failures, 30);
        }
    }

    #[test]
    fn exception_config_validation() {
        let mut cfg = ExceptionConfig::new(20, 9.0, 0.5, 0.2, 0.5, 0.3, 0.2, 0.1);
        assert!(cfg.validate().is_ok());
        cfg.rho = 0.6;
        assert!(cfg.validate().is_err());
        cfg.rho = 0.2;
        cfg.a = 0.3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tripod_degenerate_and_collinear() {
        let x = base();
        let y = HalfPlanePoint::new(0.0, std::f64::consts::E).unwrap().to_model();
        let z = HalfPlanePoint::new(0.0, (2.0f64).exp()).unwrap().to_model();
        assert!(tripod_check(&x, &y, &y, 1.0, 0.01).unwrap());
        assert!(tripod_check(&x, &z, &y, 1.0, 0.01).unwrap());
        assert!(tripod_check(&x, &x, &y, 1.0, 0.01).unwrap());
    }

    #[test]
    fn tripod_random_triangles_are_thin() {
        let mut rng = RngSpec::new(13).substream(0);
        let x = base();
        for _ in 0..200 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let phi = rng.random::<f64>() * std::f64::consts::TAU;
                let r = 0.1 + 4.9 * rng.random::<f64>();
                let xi = BoundaryDirection::from_angle(phi);
                Geodesic::ray(&x, &xi).unwrap().point_at(r)
            };
            let p = mk(&mut rng);
            let q = mk(&mut rng);
            assert!(tripod_check(&x, &p, &q, 1.0, 0.01).unwrap());
        }
    }

    #[test]
    fn mechanism_no_violations_small_run() {
        let report = mechanism_check(
            &psl2z(),
            &base(),
            &ThinOracle::ModularCusp { h: 20.0 },
            20.0,
            0.2,
            1.0,
            0.5,
            40,
            &RngSpec::new(21),
        )
        .unwrap();
        assert_eq!(report.n_violations, 0);
        assert!(report.n_eligible > 0, "no eligible pairs at all");
        assert_relative_eq!(report.bound, (2.0 - 0.8) * 20.0 - 2.0);
    }

    #[test]
    fn estimates_are_thread_count_invariant() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let law = BoundaryLaw::Harmonic(psl2z());
                estimate_e_curve(&law, &base(), &[5.0, 10.0], 100, &RngSpec::new(99)).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ea.1.mean.to_bits(), eb.1.mean.to_bits());
            assert_eq!(ea.1.stderr.to_bits(), eb.1.stderr.to_bits());
        }
    }

    #[test]
    fn parameter_validation() {
        let law = BoundaryLaw::Harmonic(psl2z());
        let x = base();
        let rng = RngSpec::new(0);
        assert!(estimate_e_curve(&law, &x, &[], 10, &rng).is_err());
        assert!(estimate_e_curve(&law, &x, &[5.0, 5.0], 10, &rng).is_err());
        assert!(estimate_e_curve(&law, &x, &[5.0], 1, &rng).is_err());
        assert!(estimate_drift(&psl2z(), &x, 0, 5, &rng).is_err());
        assert!(separation_probability(&psl2z(), &x, 3.0, 1.5, 10.0, 10, 0.1, &rng).is_err());
        assert!(shadow_decay(&psl2z(), &x, &[5.0, 3.0], 2.0, 5, 50, &rng).is_err());
        let uni = BoundaryLaw::UniformAngle;
        assert!(estimate_e(&uni, &ModelPoint::base(3), 5.0, 10, &rng).is_err());
    }
}
