//! Finitely supported probability measures on isometry groups and seeded,
//! renormalized sample paths.
//!
//! Randomness is counter-based: a [`RngSpec`] holds one master seed and hands
//! out an independent ChaCha substream per sample index, so estimator output
//! does not depend on evaluation order or thread count.
//!
//! Long products of isometries have entries of order cosh(d(x, w_n x)),
//! which leaves f64 range once the walk has drifted a few hundred units. The
//! action on H^n and its boundary is projective, so products are maintained
//! in scaled form: the matrix is divided by its largest absolute entry at
//! every step and the log factors are accumulated. Displacements are then
//! recovered in the log domain. The same scheme is used for the 2x2
//! representation, where it is exact.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constants::ORTHO_INTERVAL;
use crate::geom::{distance, GeomError, HalfPlanePoint, Isometry, Mobius, ModelPoint};

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("distribution has no atoms")]
    Empty,
    #[error("atom weights must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("atom weights sum to {0}, not 1")]
    WeightSum(f64),
    #[error("duplicate atom label {0:?}")]
    DuplicateLabel(String),
    #[error("atoms have mixed dimensions")]
    MixedDimensions,
    #[error("unknown builtin distribution {0:?}")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// One atom of a finitely supported measure on an isometry group.
#[derive(Debug, Clone)]
pub struct Atom {
    pub label: String,
    pub g: Isometry,
    pub weight: f64,
}

/// A finitely supported probability measure mu on isometries.
#[derive(Debug, Clone)]
pub struct GroupDistribution {
    atoms: Vec<Atom>,
    cdf: Vec<f64>,
}

impl GroupDistribution {
    pub fn new(atoms: Vec<Atom>) -> Result<Self, WalkError> {
        if atoms.is_empty() {
            return Err(WalkError::Empty);
        }
        let dim = atoms[0].g.dim();
        let mut sum = 0.0;
        for a in &atoms {
            if a.weight <= 0.0 {
                return Err(WalkError::NonPositiveWeight(a.weight));
            }
            if a.g.dim() != dim {
                return Err(WalkError::MixedDimensions);
            }
            sum += a.weight;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(WalkError::WeightSum(sum));
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i].iter().any(|b| b.label == a.label) {
                return Err(WalkError::DuplicateLabel(a.label.clone()));
            }
        }
        let mut cdf = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for a in &atoms {
            acc += a.weight;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { atoms, cdf })
    }

    /// Named built-ins used throughout the experiments.
    ///
    /// * `psl2z-uniform-TTS` — uniform on {T, T^-1, S} in PSL(2,Z)
    /// * `hyperbolic-pointmass(l)` — point mass on translation length l along
    ///   the (0,infinity) axis
    /// * `parabolic-pointmass` — point mass on T
    pub fn builtin(name: &str) -> Result<Self, WalkError> {
        if name == "psl2z-uniform-TTS" {
            let w = 1.0 / 3.0;
            return Self::new(vec![
                Atom { label: "T".into(), g: Isometry::from_mobius(Mobius::T), weight: w },
                Atom {
                    label: "T^-1".into(),
                    g: Isometry::from_mobius(Mobius::T.inverse()),
                    weight: w,
                },
                Atom { label: "S".into(), g: Isometry::from_mobius(Mobius::S), weight: w },
            ]);
        }
        if name == "parabolic-pointmass" {
            return Self::new(vec![Atom {
                label: "T".into(),
                g: Isometry::from_mobius(Mobius::T),
                weight: 1.0,
            }]);
        }
        if let Some(rest) = name
            .strip_prefix("hyperbolic-pointmass(")
            .and_then(|r| r.strip_suffix(')'))
        {
            let l: f64 = rest
                .parse()
                .map_err(|_| WalkError::UnknownBuiltin(name.into()))?;
            return Self::new(vec![Atom {
                label: format!("g({l})"),
                g: Isometry::from_mobius(Mobius::axis_translation(l)),
                weight: 1.0,
            }]);
        }
        Err(WalkError::UnknownBuiltin(name.into()))
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].g.dim()
    }

    /// The reflected measure: same weights on the inverses.
    pub fn reflect(&self) -> GroupDistribution {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                label: reflect_label(&a.label),
                g: a.g.inverse(),
                weight: a.weight,
            })
            .collect();
        GroupDistribution::new(atoms).expect("reflection preserves distribution invariants")
    }

    /// First moment of the step distribution at `x`: sum of mu(g) d(x, gx).
    pub fn step_moment(&self, x: &ModelPoint) -> Result<f64, WalkError> {
        let mut s = 0.0;
        for a in &self.atoms {
            s += a.weight * distance(x, &a.g.apply(x)?)?;
        }
        Ok(s)
    }

    /// Step lengths d(x, g x) per atom, in atom order.
    pub fn step_lengths(&self, x: &ModelPoint) -> Result<Vec<f64>, WalkError> {
        self.atoms
            .iter()
            .map(|a| Ok(distance(x, &a.g.apply(x)?)?))
            .collect()
    }

    /// Inverses of the atom isometries, in atom order.
    pub fn atom_inverses(&self) -> Vec<Isometry> {
        self.atoms.iter().map(|a| a.g.inverse()).collect()
    }

    pub fn sample_index(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.atoms.len() - 1)
    }

    /// Non-elementarity diagnostic for Theorem-grade inputs: looks for two
    /// loxodromic elements with distinct axes among words of length at most 4
    /// in the atoms (for {T, T^-1, S} the shortest loxodromic words have
    /// length 4). Returns a warning string when the check fails; degenerate
    /// distributions are legitimate test fixtures, so this never errors.
    pub fn non_elementarity_warning(&self) -> Option<String> {
        let mobs: Option<Vec<Mobius>> =
            self.atoms.iter().map(|a| a.g.mobius().copied()).collect();
        let mobs = match mobs {
            Some(v) => v,
            None => {
                return Some(
                    "non-elementarity not checked: no 2x2 representation available".into(),
                )
            }
        };
        let mut cands: Vec<Mobius> = mobs.clone();
        let mut frontier = mobs.clone();
        for _ in 1..4 {
            let mut next = Vec::with_capacity(frontier.len() * mobs.len());
            for w in &frontier {
                for g in &mobs {
                    next.push(w.compose(g));
                }
            }
            cands.extend(next.iter().copied());
            frontier = next;
        }
        let mut axes: Vec<(f64, f64)> = Vec::new();
        for m in &cands {
            let tr = m.a + m.d;
            if tr.abs() > 2.0 + 1e-9 {
                axes.push(fixed_points(m));
            }
        }
        for i in 0..axes.len() {
            for j in i + 1..axes.len() {
                if axis_gap(axes[i], axes[j]) > 1e-6 {
                    return None;
                }
            }
        }
        Some(
            "support may generate an elementary subgroup: no pair of loxodromics \
             with distinct axes found among words of length at most 4"
                .into(),
        )
    }
}

fn reflect_label(label: &str) -> String {
    match label.strip_suffix("^-1") {
        Some(base) => base.to_string(),
        None => format!("{label}^-1"),
    }
}

/// Real fixed points of a loxodromic Mobius map (unordered).
fn fixed_points(m: &Mobius) -> (f64, f64) {
    // c z^2 + (d - a) z - b = 0
    if m.c.abs() < 1e-15 {
        // fixes infinity and b/(d-a)
        return (f64::INFINITY, m.b / (m.d - m.a));
    }
    let disc = ((m.a + m.d).powi(2) - 4.0).max(0.0).sqrt();
    let p = (m.a - m.d + disc) / (2.0 * m.c);
    let q = (m.a - m.d - disc) / (2.0 * m.c);
    (p, q)
}

fn axis_gap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = |x: f64, y: f64| {
        if x.is_infinite() && y.is_infinite() {
            0.0
        } else if x.is_infinite() || y.is_infinite() {
            f64::INFINITY
        } else {
            (x - y).abs()
        }
    };
    let same = d(a.0, b.0).max(d(a.1, b.1));
    let swapped = d(a.0, b.1).max(d(a.1, b.0));
    same.min(swapped).min(1.0)
}

/// Master seed plus the substream derivation: sample index i maps to ChaCha
/// stream i of the seeded generator, so draws at distinct indices are
/// independent and scheduling-invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub master_seed: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn substream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(index);
        rng
    }
}

/// A 2x2 product maintained projectively: after each factor the matrix is
/// divided by its largest absolute entry and the log factor accumulated.
/// The Mobius action is unchanged by the rescaling, so this is exact.
#[derive(Debug, Clone, Copy)]
pub struct MobiusProduct {
    pub m: [[f64; 2]; 2],
    pub log_scale: f64,
}

impl MobiusProduct {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0], [0.0, 1.0]], log_scale: 0.0 }
    }

    pub fn push(&mut self, g: &Mobius) {
        let [[a, b], [c, d]] = self.m;
        let mut m = [
            [a * g.a + b * g.c, a * g.b + b * g.d],
            [c * g.a + d * g.c, c * g.b + d * g.d],
        ];
        let scale = m.iter().flatten().fold(0f64, |acc, v| acc.max(v.abs()));
        for row in &mut m {
            for v in row.iter_mut() {
                *v /= scale;
            }
        }
        self.m = m;
        self.log_scale += scale.ln();
    }

    /// Mobius action on a half-plane point; the scalar cancels.
    pub fn apply(&self, z: HalfPlanePoint) -> HalfPlanePoint {
        let det = self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0];
        let g = Mobius { a: self.m[0][0], b: self.m[0][1], c: self.m[1][0], d: self.m[1][1] };
        // entries are renormalized, not det-normalized; rescale the action
        let (x, y) = (z.re, z.im);
        let nr = (g.a * x + g.b) * (g.c * x + g.d) + g.a * g.c * y * y;
        let den = (g.c * x + g.d).powi(2) + (g.c * y).powi(2);
        HalfPlanePoint { re: nr / den, im: det * y / den }
    }
}

/// A product of isometries stored as (matrix / e^log_scale) with the largest
/// absolute matrix entry kept at 1. The projective action on points and
/// boundary directions reads off ratios, so the scale cancels; displacements
/// are recovered in the log domain.
#[derive(Debug, Clone)]
pub struct ScaledProduct {
    matrix: DMatrix<f64>,
    log_scale: f64,
}

impl ScaledProduct {
    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n + 1, n + 1), log_scale: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows() - 1
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Right-multiply by an exact isometry and renormalize.
    pub fn push(&mut self, g: &Isometry) {
        self.matrix *= g.matrix();
        self.renormalize();
    }

    fn renormalize(&mut self) {
        let scale = self.matrix.iter().fold(0f64, |acc, v| acc.max(v.abs()));
        if scale > 0.0 && scale.is_finite() {
            self.matrix /= scale;
            self.log_scale += scale.ln();
        }
    }

    /// Raw (scaled) image of a coordinate vector.
    pub fn apply_raw(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// d(x, w x), computed in the log domain when the product is large.
    pub fn displacement(&self, x: &ModelPoint) -> f64 {
        let y = self.apply_raw(x.coords());
        let q = -crate::geom::minkowski_dot(x.coords().as_slice(), y.as_slice());
        log_domain_acosh(q, self.log_scale)
    }

    /// Ball-model coordinates of w x, read projectively.
    pub fn ball_coords(&self, x: &ModelPoint) -> DVector<f64> {
        projective_ball_coords(&self.apply_raw(x.coords()))
    }

    /// Boundary direction of the escaping orbit point w x.
    pub fn escape_direction(
        &self,
        x: &ModelPoint,
    ) -> Result<crate::geom::BoundaryDirection, GeomError> {
        let y = self.apply_raw(x.coords());
        let n = y.len() - 1;
        let mut spatial: Vec<f64> = (1..=n).map(|i| y[i] / y[0]).collect();
        let norm = spatial.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GeomError::InvalidBoundary(
                "orbit point has no escape direction".into(),
            ));
        }
        for v in &mut spatial {
            *v /= norm;
        }
        let mut coords = vec![1.0];
        coords.extend(spatial);
        crate::geom::BoundaryDirection::new(coords)
    }

    /// While the true product still has small entries, undo the scaling and
    /// repair form drift by B-Gram-Schmidt. Past that window the scaled
    /// representation is the numerically meaningful one and the repair is
    /// skipped (per-entry relative error stays at the eps * steps level).
    pub fn reorthogonalize_if_small(&mut self) {
        if self.log_scale.abs() > 6.0 {
            return;
        }
        let true_matrix = &self.matrix * self.log_scale.exp();
        if let Ok(mut iso) = Isometry::from_matrix_unchecked(true_matrix) {
            iso.re_orthogonalize();
            self.matrix = iso.into_matrix();
            self.log_scale = 0.0;
            self.renormalize();
        }
    }
}

/// Ball-model coordinates from projective hyperboloid coordinates
/// (scale-invariant): a_i = x_i/x_0, v = a / (1 + sqrt(1 - |a|^2)).
pub fn projective_ball_coords(raw: &DVector<f64>) -> DVector<f64> {
    let n = raw.len() - 1;
    let a = DVector::from_fn(n, |i, _| raw[i + 1] / raw[0]);
    let s = (1.0 - a.norm_squared()).max(0.0).sqrt();
    a / (1.0 + s)
}

/// arccosh(q * e^l) without forming the product when it would overflow.
fn log_domain_acosh(q: f64, l: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let lnval = q.ln() + l;
    if lnval < 30.0 {
        crate::geom::acosh_clamped(q * l.exp())
    } else {
        // arccosh(v) = ln(2v) - O(v^-2)
        lnval + std::f64::consts::LN_2
    }
}

/// Incremental walk state: scaled product w_k plus the projective 2x2
/// product when every atom has a Mobius representation.
pub struct Walker<'a> {
    dist: &'a GroupDistribution,
    rng: ChaCha8Rng,
    product: ScaledProduct,
    mobius: Option<MobiusProduct>,
    steps: usize,
}

impl<'a> Walker<'a> {
    pub fn new(dist: &'a GroupDistribution, rng: ChaCha8Rng) -> Self {
        let mobius = dist
            .atoms
            .iter()
            .all(|a| a.g.mobius().is_some())
            .then(MobiusProduct::identity);
        Self {
            dist,
            rng,
            product: ScaledProduct::identity(dist.dim()),
            mobius,
            steps: 0,
        }
    }

    /// Advance one step; returns the sampled atom index.
    pub fn step(&mut self) -> usize {
        let idx = self.dist.sample_index(&mut self.rng);
        self.product.push(&self.dist.atoms[idx].g);
        if let (Some(mp), Some(g)) = (self.mobius.as_mut(), self.dist.atoms[idx].g.mobius()) {
            mp.push(g);
        }
        self.steps += 1;
        if self.steps % ORTHO_INTERVAL == 0 {
            self.product.reorthogonalize_if_small();
        }
        idx
    }

    pub fn product(&self) -> &ScaledProduct {
        &self.product
    }

    pub fn mobius_product(&self) -> Option<&MobiusProduct> {
        self.mobius.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// A realized sample path w_0 = id, w_1, ..., w_n with its increments and
/// the generator state needed to extend it deterministically.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub increments: Vec<usize>,
    pub products: Vec<ScaledProduct>,
    pub seed: u64,
    pub stream: u64,
    rng_after: ChaCha8Rng,
    ortho_steps: usize,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Accumulated 2x2-representation log factors per step (zero where no
    /// Mobius representation exists).
    pub fn renorm_log(&self) -> Vec<f64> {
        self.products.iter().map(|p| p.log_scale()).collect()
    }

    /// Extend in place by `extra` steps drawn from the same substream.
    pub fn extend(&mut self, dist: &GroupDistribution, extra: usize) {
        for _ in 0..extra {
            let idx = dist.sample_index(&mut self.rng_after);
            let mut next = self.products.last().unwrap().clone();
            next.push(&dist.atoms[idx].g);
            self.ortho_steps += 1;
            if self.ortho_steps % ORTHO_INTERVAL == 0 {
                next.reorthogonalize_if_small();
            }
            self.increments.push(idx);
            self.products.push(next);
        }
    }
}

/// Random product w_n = g_1 g_2 ... g_n from substream `index`.
pub fn sample_path(dist: &GroupDistribution, n: usize, rng: &RngSpec, index: u64) -> SamplePath {
    let mut walker = Walker::new(dist, rng.substream(index));
    let mut increments = Vec::with_capacity(n);
    let mut products = Vec::with_capacity(n + 1);
    products.push(ScaledProduct::identity(dist.dim()));
    for _ in 0..n {
        increments.push(walker.step());
        products.push(walker.product().clone());
    }
    SamplePath {
        increments,
        products,
        seed: rng.master_seed,
        stream: index,
        rng_after: walker.rng,
        ortho_steps: walker.steps,
    }
}

/// A bi-infinite path: forward half under mu from stream 2*index, backward
/// half under the reflected measure from stream 2*index + 1; w_0 = identity.
#[derive(Debug, Clone)]
pub struct BiInfinitePath {
    pub forward: SamplePath,
    pub backward: SamplePath,
    pub window: usize,
}

pub fn sample_bi_infinite(
    dist: &GroupDistribution,
    n: usize,
    rng: &RngSpec,
    index: u64,
) -> BiInfinitePath {
    let reflected = dist.reflect();
    BiInfinitePath {
        forward: sample_path(dist, n, rng, 2 * index),
        backward: sample_path(&reflected, n, rng, 2 * index + 1),
        window: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base() -> ModelPoint {
        ModelPoint::base(2)
    }

    #[test]
    fn builtin_psl2z() {
        let mu = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
        assert_eq!(mu.atoms().len(), 3);
        assert!(GroupDistribution::builtin("nope").is_err());
    }

    #[test]
    fn reflect_is_involution_on_atoms() {
        let mu = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
        let back = mu.reflect().reflect();
        for (a, b) in mu.atoms().iter().zip(back.atoms()) {
            assert_relative_eq!(a.g.matrix(), b.g.matrix(), epsilon = 1e-12);
            assert_eq!(a.weight, b.weight);
        }
        // S^-1 = S projectively: reflected set coincides with the original
        let refl = mu.reflect();
        let s = mu.atoms()[2].g.mobius().unwrap();
        let s_inv = refl.atoms()[2].g.mobius().unwrap();
        assert!(s.projectively_eq(s_inv, 1e-15));
    }

    #[test]
    fn reflect_point_mass() {
        let mu = GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap();
        let hat = mu.reflect();
        let g = mu.atoms()[0].g.matrix();
        let ginv = hat.atoms()[0].g.matrix();
        assert_relative_eq!(&(g * ginv), &DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn step_moment_examples() {
        let x = base();
        let id_mass = GroupDistribution::new(vec![Atom {
            label: "e".into(),
            g: Isometry::identity(2),
            weight: 1.0,
        }])
        .unwrap();
        assert_eq!(id_mass.step_moment(&x).unwrap(), 0.0);

        let tr = GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap();
        assert_relative_eq!(tr.step_moment(&x).unwrap(), 1.0, epsilon = 1e-12);

        let mu = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
        // S fixes i; T and T^-1 move i by arccosh(3/2)
        let expect = (2.0 / 3.0) * 1.5f64.acosh();
        assert_relative_eq!(mu.step_moment(&x).unwrap(), expect, epsilon = 1e-9);
    }

    #[test]
    fn sample_path_point_mass_power() {
        let mu = GroupDistribution::builtin("hyperbolic-pointmass(0.5)").unwrap();
        let rng = RngSpec::new(7);
        let p = sample_path(&mu, 5, &rng, 0);
        let x = base();
        assert_relative_eq!(p.products[5].displacement(&x), 2.5, epsilon = 1e-9);
        // n = 0 path is the identity
        let empty = sample_path(&mu, 0, &rng, 0);
        assert_eq!(empty.len(), 0);
        assert_relative_eq!(empty.products[0].displacement(&x), 0.0, epsilon = 0.0);
    }

    #[test]
    fn determinism_and_extension() {
        let mu = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
        let rng = RngSpec::new(42);
        let a = sample_path(&mu, 50, &rng, 3);
        let b = sample_path(&mu, 50, &rng, 3);
        assert_eq!(a.increments, b.increments);
        let mut c = sample_path(&mu, 20, &rng, 3);
        c.extend(&mu, 30);
        assert_eq!(a.increments, c.increments);
        assert_relative_eq!(
            a.products[50].matrix(),
            c.products[50].matrix(),
            epsilon = 1e-9
        );
        // distinct streams differ
        let d = sample_path(&mu, 50, &rng, 4);
        assert_ne!(a.increments, d.increments);
    }

    #[test]
    fn bi_infinite_basics() {
        let mu = GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap();
        let bi = sample_bi_infinite(&mu, 6, &RngSpec::new(1), 0);
        let x = base();
        // x_k = g^k x forward, g^-k x backward
        for k in 0..=6 {
            assert_relative_eq!(bi.forward.products[k].displacement(&x), k as f64, epsilon = 1e-9);
            assert_relative_eq!(bi.backward.products[k].displacement(&x), k as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn marginal_law_matches_mu() {
        // chi-squared goodness of fit for the law of the first increment
        let mu = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
        let rng = RngSpec::new(11);
        let n = 100_000u64;
        let mut counts = [0usize; 3];
        for i in 0..n {
            let mut w = Walker::new(&mu, rng.substream(i));
            counts[w.step()] += 1;
        }
        let expected = n as f64 / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // df = 2; chi2 > 13.8 has p < 0.001
        assert!(chi2 < 13.8, "chi2 = {chi2}, counts = {counts:?}");
    }

    /// Boundary direction of the projective pair (p : q) on the real line,
    /// via r = p/q and r <-> (r^2+1, r^2-1, 2r) / (r^2+1).
    fn dir_from_pair(p: f64, q: f64) -> DVector<f64> {
        let n2 = p * p + q * q;
        DVector::from_vec(vec![1.0, (p * p - q * q) / n2, 2.0 * p * q / n2])
    }

    /// Worst gap between the 2x2 and (scaled) 3x3 boundary actions over a
    /// psl2z walk of length `steps`. The 2x2 side tracks the boundary point
    /// as a projective pair, so no determinant enters anywhere.
    fn boundary_action_gap(seed: u64, steps: usize) -> f64 {
        let mu = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
        let mut walker = Walker::new(&mu, RngSpec::new(seed).substream(0));
        // boundary point r = cot(theta/2) matching direction (1, cos, sin)
        let theta = 0.7f64;
        let xi = crate::geom::BoundaryDirection::from_angle(theta);
        let (v0, v1) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        let mut worst = 0f64;
        for _ in 0..steps {
            walker.step();
            let m = walker.mobius_product().unwrap().m;
            let (p, q) = (m[0][0] * v0 + m[0][1] * v1, m[1][0] * v0 + m[1][1] * v1);
            // entries are renormalized to max 1, so a small image pair means
            // the test direction sits near the repelling direction: the image
            // is ill-conditioned in any representation, skip the comparison
            if p.hypot(q) < 0.1 {
                continue;
            }
            let y = walker.product().apply_raw(xi.coords());
            let via_matrix = DVector::from_vec(vec![1.0, y[1] / y[0], y[2] / y[0]]);
            worst = worst.max((dir_from_pair(p, q) - via_matrix).norm());
        }
        worst
    }

    #[test]
    fn renormalization_soundness() {
        // 10^4-step boundary-action agreement, plus interior-action agreement
        // against an exact Mobius composition while the orbit is near enough
        // for half-plane coordinates to be representable.
        let worst = boundary_action_gap(5, 10_000);
        assert!(worst < 1e-6, "worst boundary-action gap {worst}");

        let mu = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
        let mut walker = Walker::new(&mu, RngSpec::new(5).substream(1));
        let x = HalfPlanePoint::i().to_model();
        let mut exact = DMatrix::<f64>::identity(3, 3);
        let mut worst_interior = 0f64;
        for _ in 0..300 {
            let idx = walker.step();
            exact = &exact * mu.atoms()[idx].g.matrix();
            let y = &exact * x.coords();
            // skip ill-conditioned steps (x near the repelling direction)
            let mm = exact.iter().fold(0f64, |acc, v| acc.max(v.abs()));
            if y.amax() < 1e-2 * mm {
                continue;
            }
            // compare projective ratios; the radial ball coordinate is a
            // cancellation residue at depth and would only compare noise
            let z = walker.product().apply_raw(x.coords());
            let a = DVector::from_vec(vec![y[1] / y[0], y[2] / y[0]]);
            let b = DVector::from_vec(vec![z[1] / z[0], z[2] / z[0]]);
            worst_interior = worst_interior.max((a - b).norm());
        }
        assert!(worst_interior < 1e-9, "worst interior-action gap {worst_interior}");
    }

    #[test]
    fn long_product_stays_sound() {
        // 10^5-step hygiene: the scaled 3x3 product tracks the exact
        // projective 2x2 boundary action within the drift budget, and the
        // displacement stays finite (no overflow anywhere).
        let worst = boundary_action_gap(9, 100_000);
        assert!(worst < 1e-6, "worst boundary-action gap {worst}");

        let mu = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
        let mut walker = Walker::new(&mu, RngSpec::new(9).substream(0));
        for _ in 0..100_000 {
            walker.step();
        }
        let d = walker.product().displacement(&base());
        assert!(d.is_finite() && d > 0.0, "displacement {d}");
        assert!(walker.mobius_product().unwrap().log_scale.is_finite());
    }

    #[test]
    fn displacement_log_domain_matches_direct() {
        // point mass translation: displacement is exactly k * l in both the
        // direct and the log-domain branch
        let mu = GroupDistribution::builtin("hyperbolic-pointmass(1.0)").unwrap();
        let x = base();
        let mut w = Walker::new(&mu, RngSpec::new(0).substream(0));
        for k in 1..=2000 {
            w.step();
            let d = w.product().displacement(&x);
            assert!(
                (d - k as f64).abs() < 1e-6 * (k as f64).max(1.0),
                "k = {k}, d = {d}"
            );
        }
    }

    #[test]
    fn non_elementarity_diagnostic() {
        let mu = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
        assert!(mu.non_elementarity_warning().is_none(), "{:?}", mu.non_elementarity_warning());
        let par = GroupDistribution::builtin("parabolic-pointmass").unwrap();
        assert!(par.non_elementarity_warning().is_some());
    }

    #[test]
    fn validation_errors() {
        let g = Isometry::identity(2);
        assert!(matches!(GroupDistribution::new(vec![]), Err(WalkError::Empty)));
        let bad_sum = GroupDistribution::new(vec![Atom {
            label: "a".into(),
            g: g.clone(),
            weight: 0.9,
        }]);
        assert!(matches!(bad_sum, Err(WalkError::WeightSum(_))));
        let dup = GroupDistribution::new(vec![
            Atom { label: "a".into(), g: g.clone(), weight: 0.5 },
            Atom { label: "a".into(), g, weight: 0.5 },
        ]);
        assert!(matches!(dup, Err(WalkError::DuplicateLabel(_))));
    }
}
