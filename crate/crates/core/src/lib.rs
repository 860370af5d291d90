//! Simulation laboratory for statistical hyperbolicity of hyperbolic space
//! under harmonic measures induced by random walks on isometry groups.
//!
//! The crate is organized bottom-up:
//!
//! * [`geom`] — exact curvature -1 geometry of H^n in the hyperboloid model:
//!   points, isometries, geodesics, boundary directions, Gromov products,
//!   shadows, and an upper-half-plane adapter for n = 2.
//! * [`walk`] — finitely supported measures on isometry groups and seeded,
//!   renormalized sample paths (forward, backward, bi-infinite).
//! * [`boundary`] — boundary convergence of walks, harmonic-measure sampling,
//!   sphere measures via ray shooting, tracked geodesics.
//! * [`lattice`] — modular-group tooling: fundamental-domain reduction,
//!   cusp-based thickness, thickness proportions, ball-excursion decomposition.
//! * [`estimators`] — Monte Carlo estimators: E(X), drift, recurrence
//!   frequency, thickness/separation probabilities, shadow-measure decay,
//!   exceptional-set rates, tripod checks.
//! * [`cli`] — experiment configs, dispatch, CSV/JSON emission, manifests.

pub mod boundary;
pub mod cli;
pub mod constants;
pub mod estimators;
pub mod geom;
pub mod lattice;
pub mod walk;
