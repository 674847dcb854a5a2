//! Radial fast diffusion u_t = Δ(u^m) on hyperbolic space H^N.
//!
//! * [`geometry`] — radial calculus on H^N (weights, Laplacian, norms, s(r)).
//! * [`stationary`] — the ground state of −ΔV = cV^{1/m} by shooting, and the
//!   ball minimizer that cross-checks it.
//! * [`evolution`] — implicit solvers for the equation and its rescaled flow.
//! * [`diagnostics`] — functionals, relative error, envelopes, derivative ratios.
//! * [`barriers`] — explicit sub/supersolutions and their residual checks.
//! * [`config`] / [`run`] — configuration and artifact-producing runs.

// `!(x > 0.0)` is the intended guard: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barriers;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod ode;
pub mod operator;
pub mod quad;
pub mod run;
pub mod stationary;

pub use error::{Error, Result};
pub use geometry::{HyperbolicSpace, RadialField, RadialGrid, Stretching};
pub use operator::OuterBoundary;
pub use stationary::StationaryProfile;
