//! Experiment harness: JSON configs, validation, dispatch to the estimators,
//! CSV/JSON emission, and reproducibility manifests.
//!
//! A run writes two files into the output directory: `results.csv` with one
//! row per parameter point, and `manifest.json` echoing the fully expanded
//! config (built-in distribution names are replaced by explicit matrices),
//! the master seed, a config hash, the artifact version, and failure counts.
//! Floats in the CSV carry 17 significant digits, so reproducibility checks
//! can compare bytes.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constants::{EVENT_GRID, THIN_TRIANGLE_C};
use crate::estimators::{
    estimate_drift, estimate_e_curve, exception_rates, recurrence_frequency,
    separation_probability, shadow_decay, thickness_probability, tripod_check, BoundaryLaw,
    EstimatorError, ExceptionConfig, MonteCarloEstimate,
};
use crate::geom::{
    distance, gromov_product, gromov_product_boundary, BoundaryDirection, Geodesic,
    HalfPlanePoint, Isometry, Mobius, ModelPoint,
};
use crate::lattice::{reduce_modular, ThinOracle};
use crate::walk::{Atom, GroupDistribution, RngSpec};

pub const EXPERIMENTS: [&str; 8] = [
    "estimate-e",
    "drift",
    "recurrence",
    "separation",
    "thickness",
    "shadow-decay",
    "exceptions",
    "geom-selftest",
];

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration; maps to exit code 2.
    #[error("invalid config: {0}")]
    Config(String),
    /// Estimator or selftest failure; maps to exit code 3.
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("geometry selftest failed: {0}")]
    SelftestFailed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One finitely supported atom, as written in configs and manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomSpec {
    pub label: String,
    pub weight: f64,
    /// Row-major Mobius entries [a, b, c, d].
    pub mobius: [f64; 4],
}

/// Distribution field of a config: a built-in name or explicit atoms. The
/// special name "uniform-angle" selects the Lebesgue control measure for the
/// estimate-e experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionSpec {
    Builtin { builtin: String },
    Atoms { atoms: Vec<AtomSpec> },
}

/// Base point in upper-half-plane coordinates (the harness is H^2-focused;
/// the library itself is dimension-generic).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasePointSpec {
    pub re: f64,
    pub im: f64,
}

/// Flat bag of estimator parameters; each experiment reads the subset it
/// needs and rejects configs missing a required entry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub radii: Option<Vec<f64>>,
    pub r: Option<f64>,
    pub n_pairs: Option<usize>,
    pub n_samples: Option<usize>,
    pub n: Option<usize>,
    #[serde(rename = "M")]
    pub m_sep: Option<f64>,
    pub eta: Option<f64>,
    pub theta: Option<f64>,
    pub h: Option<f64>,
    pub tau: Option<f64>,
    #[serde(rename = "R")]
    pub big_r: Option<f64>,
    pub delta: Option<f64>,
    pub n_dir: Option<usize>,
    pub n_boundary: Option<usize>,
    pub distances: Option<Vec<f64>>,
    pub p: Option<f64>,
    pub rho: Option<f64>,
    #[serde(rename = "D")]
    pub d_cut: Option<f64>,
    pub c: Option<f64>,
    pub a: Option<f64>,
    pub a_hat: Option<f64>,
    pub m_max: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub distribution: DistributionSpec,
    pub base_point: BasePointSpec,
    #[serde(default)]
    pub params: Params,
    pub seed: u64,
}

/// Reproducibility manifest written next to the results.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub config_hash: String,
    pub version: String,
    pub duration_seconds: f64,
    pub n_failures_total: usize,
    pub warnings: Vec<String>,
}

/// One CSV row: a parameter point with its estimate.
#[derive(Debug, Clone)]
pub struct Row {
    pub parameter: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub n_failures: usize,
}

impl Row {
    fn from_estimate(parameter: impl Into<String>, e: &MonteCarloEstimate) -> Self {
        Row {
            parameter: parameter.into(),
            mean: e.mean,
            stderr: e.stderr,
            n_samples: e.n_samples,
            n_failures: e.n_failures,
        }
    }
}

/// Parse a config file; serde errors carry line/column locations.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Everything `run` needs, extracted and checked. `validate` is the
/// diagnostics of this extraction, so the two accept exactly the same
/// configs.
enum Plan {
    EstimateE { law: BoundaryLaw, x: ModelPoint, radii: Vec<f64>, n_pairs: usize },
    Drift { dist: GroupDistribution, x: ModelPoint, n: usize, n_samples: usize },
    Recurrence { dist: GroupDistribution, x: ModelPoint, big_r: f64, n: usize, n_samples: usize },
    Separation {
        dist: GroupDistribution,
        x: ModelPoint,
        m_sep: f64,
        eta: f64,
        r: f64,
        n_pairs: usize,
        delta: f64,
    },
    Thickness {
        dist: GroupDistribution,
        x: ModelPoint,
        oracle: ThinOracle,
        theta: f64,
        eta: f64,
        r: f64,
        n_samples: usize,
    },
    ShadowDecay {
        dist: GroupDistribution,
        x: ModelPoint,
        distances: Vec<f64>,
        tau: f64,
        n_dir: usize,
        n_boundary: usize,
    },
    Exceptions { dist: GroupDistribution, x: ModelPoint, cfg: ExceptionConfig, n_samples: usize },
    GeomSelftest,
}

fn build_distribution(
    spec: &DistributionSpec,
    diags: &mut Vec<String>,
) -> Option<GroupDistribution> {
    match spec {
        DistributionSpec::Builtin { builtin } => match GroupDistribution::builtin(builtin) {
            Ok(d) => Some(d),
            Err(e) => {
                diags.push(format!("distribution: {e}"));
                None
            }
        },
        DistributionSpec::Atoms { atoms } => {
            let mut out = Vec::new();
            for a in atoms {
                let [ma, mb, mc, md] = a.mobius;
                match Mobius::new(ma, mb, mc, md) {
                    Ok(m) => out.push(Atom {
                        label: a.label.clone(),
                        g: Isometry::from_mobius(m),
                        weight: a.weight,
                    }),
                    Err(e) => {
                        diags.push(format!("distribution atom {:?}: {e}", a.label));
                        return None;
                    }
                }
            }
            match GroupDistribution::new(out) {
                Ok(d) => Some(d),
                Err(e) => {
                    diags.push(format!("distribution: {e}"));
                    None
                }
            }
        }
    }
}

fn plan(cfg: &ExperimentConfig) -> Result<Plan, Vec<String>> {
    let mut diags = Vec::new();
    if !EXPERIMENTS.contains(&cfg.experiment.as_str()) {
        return Err(vec![format!(
            "unknown experiment {:?}; valid names: {}",
            cfg.experiment,
            EXPERIMENTS.join(", ")
        )]);
    }
    if cfg.experiment == "geom-selftest" {
        return Ok(Plan::GeomSelftest);
    }
    let x = match HalfPlanePoint::new(cfg.base_point.re, cfg.base_point.im) {
        Ok(z) => Some(z.to_model()),
        Err(e) => {
            diags.push(format!("base_point: {e}"));
            None
        }
    };
    let uniform_angle = matches!(
        &cfg.distribution,
        DistributionSpec::Builtin { builtin } if builtin == "uniform-angle"
    );
    let dist = if uniform_angle {
        if cfg.experiment != "estimate-e" {
            diags.push("the uniform-angle control measure is only valid for estimate-e".into());
        }
        None
    } else {
        build_distribution(&cfg.distribution, &mut diags)
    };
    let p = &cfg.params;
    let require = |field: Option<f64>, name: &str, diags: &mut Vec<String>| -> f64 {
        match field {
            Some(v) => v,
            None => {
                diags.push(format!("{} requires params.{name}", cfg.experiment));
                f64::NAN
            }
        }
    };
    let check_unit = |v: f64, name: &str, diags: &mut Vec<String>| {
        if v.is_finite() && !(v > 0.0 && v < 1.0) {
            diags.push(format!("{name} must lie in (0,1), got {v}"));
        }
    };
    let check_pos = |v: f64, name: &str, diags: &mut Vec<String>| {
        if v.is_finite() && !(v > 0.0) {
            diags.push(format!("{name} must be positive, got {v}"));
        }
    };
    let check_grid = |vals: &[f64], name: &str, diags: &mut Vec<String>| {
        if vals.is_empty() {
            diags.push(format!("{name} must be nonempty"));
        } else if vals[0] <= 0.0 || !vals.windows(2).all(|w| w[0] < w[1]) {
            diags.push(format!("{name} must be positive and strictly increasing"));
        }
    };
    let out = match cfg.experiment.as_str() {
        "estimate-e" => {
            let radii = match (&p.radii, p.r) {
                (Some(v), _) => {
                    check_grid(v, "radii", &mut diags);
                    v.clone()
                }
                (None, Some(r)) => {
                    check_grid(&[r], "radii", &mut diags);
                    vec![r]
                }
                (None, None) => {
                    diags.push("estimate-e requires params.radii (or params.r)".into());
                    Vec::new()
                }
            };
            let n_pairs = p.n_pairs.unwrap_or(1000);
            if n_pairs < 2 {
                diags.push("n_pairs must be at least 2".into());
            }
            let law = if uniform_angle {
                Some(BoundaryLaw::UniformAngle)
            } else {
                dist.clone().map(BoundaryLaw::Harmonic)
            };
            law.zip(x).map(|(law, x)| Plan::EstimateE { law, x, radii, n_pairs })
        }
        "drift" => {
            let n = p.n.unwrap_or(0);
            if n == 0 {
                diags.push("drift requires params.n >= 1".into());
            }
            let n_samples = p.n_samples.unwrap_or(200);
            dist.zip(x).map(|(dist, x)| Plan::Drift { dist, x, n, n_samples })
        }
        "recurrence" => {
            let big_r = require(p.big_r, "R", &mut diags);
            check_pos(big_r, "R", &mut diags);
            let n = p.n.unwrap_or(50);
            let n_samples = p.n_samples.unwrap_or(200);
            dist.zip(x).map(|(dist, x)| Plan::Recurrence { dist, x, big_r, n, n_samples })
        }
        "separation" => {
            let m_sep = p.m_sep.unwrap_or(3.0);
            if m_sep < 0.0 {
                diags.push("M must be nonnegative".into());
            }
            let eta = p.eta.unwrap_or(0.2);
            check_unit(eta, "eta", &mut diags);
            let r = require(p.r, "r", &mut diags);
            check_pos(r, "r", &mut diags);
            let delta = p.delta.unwrap_or(EVENT_GRID);
            check_pos(delta, "delta", &mut diags);
            let n_pairs = p.n_pairs.unwrap_or(500);
            dist.zip(x)
                .map(|(dist, x)| Plan::Separation { dist, x, m_sep, eta, r, n_pairs, delta })
        }
        "thickness" => {
            let theta = p.theta.unwrap_or(0.5);
            check_unit(theta, "theta", &mut diags);
            let eta = p.eta.unwrap_or(0.2);
            check_unit(eta, "eta", &mut diags);
            let h = p.h.unwrap_or(20.0);
            check_pos(h, "h", &mut diags);
            let r = require(p.r, "r", &mut diags);
            check_pos(r, "r", &mut diags);
            let n_samples = p.n_samples.unwrap_or(500);
            dist.zip(x).map(|(dist, x)| Plan::Thickness {
                dist,
                x,
                oracle: ThinOracle::ModularCusp { h },
                theta,
                eta,
                r,
                n_samples,
            })
        }
        "shadow-decay" => {
            let distances = p.distances.clone().unwrap_or_default();
            if distances.is_empty() {
                diags.push("shadow-decay requires params.distances".into());
            } else {
                check_grid(&distances, "distances", &mut diags);
            }
            let tau = p.tau.unwrap_or(2.0);
            if tau < 0.0 {
                diags.push("tau must be nonnegative".into());
            }
            let n_dir = p.n_dir.unwrap_or(20);
            let n_boundary = p.n_boundary.unwrap_or(2000);
            if n_dir == 0 || n_boundary < 2 {
                diags.push("need n_dir >= 1 and n_boundary >= 2".into());
            }
            dist.zip(x)
                .map(|(dist, x)| Plan::ShadowDecay { dist, x, distances, tau, n_dir, n_boundary })
        }
        "exceptions" => {
            let n = p.n.unwrap_or(0);
            if n == 0 {
                diags.push("exceptions requires params.n >= 1".into());
            }
            let big_r = require(p.big_r, "R", &mut diags);
            let pp = require(p.p, "p", &mut diags);
            let rho = require(p.rho, "rho", &mut diags);
            let d_cut = require(p.d_cut, "D", &mut diags);
            let c = require(p.c, "c", &mut diags);
            let a_hat = require(p.a_hat, "a_hat", &mut diags);
            let a = p.a.unwrap_or(0.5 * a_hat);
            let n_samples = p.n_samples.unwrap_or(400);
            if diags.is_empty() && n > 0 {
                let mut ecfg = ExceptionConfig::new(n, big_r, pp, rho, d_cut, c, a_hat, a);
                if let Some(m_max) = p.m_max {
                    ecfg.m_max = m_max;
                }
                if let Err(e) = ecfg.validate() {
                    diags.push(e.to_string());
                }
                dist.zip(x).map(|(dist, x)| Plan::Exceptions { dist, x, cfg: ecfg, n_samples })
            } else {
                None
            }
        }
        _ => unreachable!(),
    };
    match out {
        Some(plan) if diags.is_empty() => Ok(plan),
        _ => {
            debug_assert!(!diags.is_empty());
            Err(diags)
        }
    }
}

/// Diagnostics for a parsed config; empty iff `run` would accept it.
pub fn validate(cfg: &ExperimentConfig) -> Vec<String> {
    match plan(cfg) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    }
}

/// Echo with built-in distribution names expanded to explicit matrices.
fn expand_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut echo = cfg.clone();
    if let DistributionSpec::Builtin { builtin } = &cfg.distribution {
        if builtin != "uniform-angle" {
            if let Ok(d) = GroupDistribution::builtin(builtin) {
                echo.distribution = DistributionSpec::Atoms {
                    atoms: d
                        .atoms()
                        .iter()
                        .map(|a| {
                            let m = a.g.mobius().expect("builtins are planar");
                            AtomSpec {
                                label: a.label.clone(),
                                weight: a.weight,
                                mobius: [m.a, m.b, m.c, m.d],
                            }
                        })
                        .collect(),
                };
            }
        }
    }
    echo
}

fn dispatch(plan: &Plan, rng: &RngSpec) -> Result<Vec<Row>, CliError> {
    Ok(match plan {
        Plan::EstimateE { law, x, radii, n_pairs } => {
            let curve = estimate_e_curve(law, x, radii, *n_pairs, rng)?;
            curve
                .entries
                .iter()
                .map(|(r, e)| Row::from_estimate(format!("r={r}"), e))
                .collect()
        }
        Plan::Drift { dist, x, n, n_samples } => {
            let e = estimate_drift(dist, x, *n, *n_samples, rng)?;
            vec![Row::from_estimate(format!("n={n}"), &e)]
        }
        Plan::Recurrence { dist, x, big_r, n, n_samples } => {
            let (freq, lam) = recurrence_frequency(dist, x, *big_r, *n, *n_samples, rng)?;
            vec![
                Row::from_estimate(format!("freq R={big_r}"), &freq),
                Row::from_estimate(format!("lambda R={big_r}"), &lam),
            ]
        }
        Plan::Separation { dist, x, m_sep, eta, r, n_pairs, delta } => {
            let e = separation_probability(dist, x, *m_sep, *eta, *r, *n_pairs, *delta, rng)?;
            vec![Row::from_estimate(format!("r={r}"), &e)]
        }
        Plan::Thickness { dist, x, oracle, theta, eta, r, n_samples } => {
            let e = thickness_probability(dist, x, oracle, *theta, *eta, *r, *n_samples, rng)?;
            vec![Row::from_estimate(format!("r={r}"), &e)]
        }
        Plan::ShadowDecay { dist, x, distances, tau, n_dir, n_boundary } => {
            let out = shadow_decay(dist, x, distances, *tau, *n_dir, *n_boundary, rng)?;
            out.iter().map(|(d, e)| Row::from_estimate(format!("d={d}"), e)).collect()
        }
        Plan::Exceptions { dist, x, cfg, n_samples } => {
            let rates = exception_rates(dist, x, cfg, *n_samples, rng)?;
            vec![
                Row::from_estimate("E1", &rates.e1),
                Row::from_estimate("E2", &rates.e2),
                Row::from_estimate("E3", &rates.e3),
            ]
        }
        Plan::GeomSelftest => geom_selftest(rng)?,
    })
}

fn csv_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_results(rows: &[Row], path: &Path) -> Result<(), CliError> {
    let mut out = String::from("parameter,mean,stderr,n_samples,n_failures\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.parameter,
            csv_float(r.mean),
            csv_float(r.stderr),
            r.n_samples,
            r.n_failures
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Run one experiment and write `results.csv` and `manifest.json` into
/// `out_dir`. The master seed is the config's; results are independent of
/// the worker count.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let plan = plan(cfg).map_err(|d| CliError::Config(d.join("; ")))?;
    let rng = RngSpec::new(cfg.seed);
    let mut warnings = Vec::new();
    if let Plan::Drift { dist, .. }
    | Plan::Recurrence { dist, .. }
    | Plan::Separation { dist, .. }
    | Plan::Thickness { dist, .. }
    | Plan::ShadowDecay { dist, .. }
    | Plan::Exceptions { dist, .. } = &plan
    {
        if let Some(w) = dist.non_elementarity_warning() {
            warnings.push(w);
        }
    }
    let rows = dispatch(&plan, &rng)?;
    std::fs::create_dir_all(out_dir)?;
    write_results(&rows, &out_dir.join("results.csv"))?;
    let echo = expand_config(cfg);
    let echo_bytes = serde_json::to_vec(&echo).expect("config serializes");
    let manifest = RunManifest {
        master_seed: cfg.seed,
        config_hash: Sha256::digest(&echo_bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_seconds: started.elapsed().as_secs_f64(),
        n_failures_total: rows.iter().map(|r| r.n_failures).sum(),
        warnings,
        config: echo,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// The geometry/lattice invariant suite behind the geom-selftest experiment:
/// isometry invariance of distances, the boundary Gromov-product limit, thin
/// triangles, modular reduction idempotence, and the excursion length bound.
/// Fails hard on the first violated invariant.
fn geom_selftest(rng: &RngSpec) -> Result<Vec<Row>, CliError> {
    let x = ModelPoint::base(2);
    let fail = |name: &str, detail: String| -> CliError {
        CliError::SelftestFailed(format!("{name}: {detail}"))
    };
    let mut rows = Vec::new();
    let pass = |name: &str, n: usize, rows: &mut Vec<Row>| {
        rows.push(Row {
            parameter: name.to_string(),
            mean: 1.0,
            stderr: 0.0,
            n_samples: n,
            n_failures: 0,
        });
    };
    let rand_point = |rr: &mut rand_chacha::ChaCha8Rng| {
        let phi: f64 = rand::Rng::random::<f64>(rr) * std::f64::consts::TAU;
        let t: f64 = rand::Rng::random::<f64>(rr) * 3.0;
        Geodesic::ray(&x, &BoundaryDirection::from_angle(phi)).unwrap().point_at(t)
    };
    // distance roundoff grows like eps * e^(d1 + d2 - d), so points and words
    // are kept at a scale where the 1e-9 bar is meaningful
    let rand_word = |rr: &mut rand_chacha::ChaCha8Rng| {
        let gens = [Mobius::T, Mobius::T.inverse(), Mobius::S];
        let mut g = Isometry::identity(2);
        for _ in 0..4 {
            let k = rand::Rng::random_range(rr, 0..3usize);
            g = g.compose(&Isometry::from_mobius(gens[k])).unwrap();
        }
        g
    };

    // isometry invariance of the distance, 1e-9
    let n = 2000;
    for i in 0..n {
        let mut rr = rng.substream(i);
        let (p, q) = (rand_point(&mut rr), rand_point(&mut rr));
        let g = rand_word(&mut rr);
        let d0 = distance(&p, &q).map_err(EstimatorError::from)?;
        let d1 = distance(&g.apply(&p).unwrap(), &g.apply(&q).unwrap())
            .map_err(EstimatorError::from)?;
        if (d0 - d1).abs() > 1e-9 {
            return Err(fail("isometry-invariance", format!("|{d0} - {d1}| > 1e-9")));
        }
    }
    pass("isometry-invariance", n as usize, &mut rows);

    // finite-t Gromov products converge to the boundary product, 1e-6 at t=18
    let n = 2000;
    for i in 0..n {
        let mut rr = rng.substream(1_000_000 + i);
        let phi1: f64 = rand::Rng::random::<f64>(&mut rr) * std::f64::consts::TAU;
        // keep the visual angle bounded away from zero so the product is O(1)
        let dphi = 0.3 + 5.0 * rand::Rng::random::<f64>(&mut rr);
        let xi = BoundaryDirection::from_angle(phi1);
        let eta = BoundaryDirection::from_angle(phi1 + dphi);
        let gp_inf = gromov_product_boundary(&x, &xi, &eta).map_err(EstimatorError::from)?;
        let t = 18.0;
        let y = Geodesic::ray(&x, &xi).unwrap().point_at(t);
        let z = Geodesic::ray(&x, &eta).unwrap().point_at(t);
        let gp_t = gromov_product(&x, &y, &z).map_err(EstimatorError::from)?;
        if (gp_inf - gp_t).abs() > 1e-6 {
            return Err(fail("boundary-product-limit", format!("|{gp_inf} - {gp_t}| > 1e-6")));
        }
    }
    pass("boundary-product-limit", n as usize, &mut rows);

    // thin triangles with C = 1
    let n = 10_000;
    for i in 0..n {
        let mut rr = rng.substream(2_000_000 + i);
        let (p, q) = (rand_point(&mut rr), rand_point(&mut rr));
        if !tripod_check(&x, &p, &q, THIN_TRIANGLE_C, 0.01).map_err(EstimatorError::from)? {
            return Err(fail("thin-triangles", format!("triangle {i} exceeds C = 1")));
        }
    }
    pass("thin-triangles", n as usize, &mut rows);

    // modular reduction is idempotent
    let n = 2000;
    for i in 0..n {
        let mut rr = rng.substream(3_000_000 + i);
        let re = 60.0 * rand::Rng::random::<f64>(&mut rr) - 30.0;
        let im = (6.0 * rand::Rng::random::<f64>(&mut rr) - 3.0).exp();
        let z = HalfPlanePoint::new(re, im).unwrap();
        let (z1, _) = reduce_modular(z).map_err(EstimatorError::from)?;
        let (z2, w2) = reduce_modular(z1).map_err(EstimatorError::from)?;
        if !w2.is_empty() || (z1.re - z2.re).abs() > 1e-12 || (z1.im - z2.im).abs() > 1e-12 {
            return Err(fail("reduction-idempotent", format!("point {i} moved on re-reduction")));
        }
    }
    pass("reduction-idempotent", n as usize, &mut rows);

    // segment between points within R/3 of centers at distance 2d has length
    // at most 2R + 2d
    let n = 1000;
    let r_ball = 3.0;
    for i in 0..n {
        let mut rr = rng.substream(4_000_000 + i);
        let mut u = || rand::Rng::random::<f64>(&mut rr);
        let c1 = HalfPlanePoint::new(4.0 * u() - 2.0, 0.3 + 2.0 * u()).unwrap().to_model();
        let c2 = HalfPlanePoint::new(4.0 * u() - 2.0, 0.3 + 2.0 * u()).unwrap().to_model();
        let two_d = distance(&c1, &c2).map_err(EstimatorError::from)?;
        let e1 = Geodesic::ray(&c1, &BoundaryDirection::from_angle(u() * 3.0))
            .unwrap()
            .point_at(u() * r_ball / 3.0);
        let e2 = Geodesic::ray(&c2, &BoundaryDirection::from_angle(u() * 3.0))
            .unwrap()
            .point_at(u() * r_ball / 3.0);
        let len = distance(&e1, &e2).map_err(EstimatorError::from)?;
        if len > 2.0 * r_ball + two_d + 1e-9 {
            return Err(fail("excursion-bound", format!("len {len} > 2R + 2d")));
        }
    }
    pass("excursion-bound", n as usize, &mut rows);

    Ok(rows)
}
