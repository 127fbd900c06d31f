//! Simulation and prediction toolkit for the first-exit behavior of
//! heavy-tailed stochastic recursions with truncated (clipped) updates.
//!
//! The chain is `X_{k+1} = X_k + phi_b(eta a(X_k) + eta^gamma sigma(X_k) Z_k)`
//! with regularly varying noise `Z`. The crate simulates first exits from an
//! attraction domain, predicts their time scale `C * eta * lambda(eta)^J`
//! and exit-location law from the geometry (the minimal jump count `J`) and
//! the limiting jump measure (the constant `C`), and cross-validates the
//! two against each other:
//!
//! - [`noise`]: heavy-tailed increment models and the rate function lambda.
//! - [`fields`]: drift/diffusion pairs and the built-in registry.
//! - [`dynamics`]: the truncated Euler chain itself.
//! - [`flow`]: the deterministic drift flow and jump-perturbed integration.
//! - [`geometry`]: exit domains and the certified minimal jump count.
//! - [`measures`]: importance-sampled limiting jump measures and exit rates.
//! - [`exit`]: first-exit experiments and comparisons against predictions.
//! - [`atoms`]: the regeneration-framework diagnostics harness.
//! - [`experiment`]: config-driven pipelines behind the CLI.
//!
//! Everything random is driven by explicit stream-indexed generators
//! ([`rng`]), so every result is reproducible from one master seed and
//! independent of the parallelism degree.

pub mod atoms;
pub mod dynamics;
pub mod error;
pub mod exit;
pub mod experiment;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod measures;
pub mod noise;
pub mod parallel;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
