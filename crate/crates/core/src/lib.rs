//! Numerical laboratory for uncertainty scaling laws.
//!
//! The crate implements the full pipeline from data generation to fitted
//! power laws:
//!
//! * [`linalg`] / [`rng`] — dense symmetric kernels (Cholesky with jitter
//!   escalation, cyclic Jacobi eigenvalues) and splittable counter-based
//!   random streams.
//! * [`dataset`] — deterministic two-moons and linear-Gaussian generators
//!   with nested subsampling.
//! * [`uq`] — entropy- and variance-based decomposition of predictive
//!   ensembles into total, aleatoric and epistemic parts.
//! * [`blr`] — exact conjugate Bayesian linear regression, predictive
//!   contraction, and the generalization-error decomposition.
//! * [`nnet`] — a minimal tanh MLP over a flat parameter vector with exact
//!   gradients, per-logit Jacobians, dropout, and MAP training.
//! * [`laplace`] — full-covariance linearized Laplace with GGN curvature and
//!   the logit/probability-space epistemic-uncertainty estimators.
//! * [`samplers`] — HMC over network weights, MC-dropout and deep ensembles.
//! * [`scaling`] — power-law fitting (with and without floor),
//!   extrapolation, threshold crossing and knee detection.
//! * [`harness`] — the configuration-driven experiment runner behind the
//!   `uqscale` CLI (`run` / `report` subcommands, CSV/JSON/SVG artifacts).

pub mod blr;
pub mod dataset;
pub mod harness;
pub mod laplace;
pub mod linalg;
pub mod nnet;
pub mod rng;
pub mod samplers;
pub mod scaling;
pub mod uq;
