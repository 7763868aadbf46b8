//! Reduced over-collocation (ROC) surrogates for parametrized nonlinear PDEs.
//!
//! The crate builds reduced-order models for three benchmark problems
//! (a Poisson-Boltzmann equation, a cubic reaction diffusion equation, and a
//! nonlinear convection diffusion equation) discretized by second-order finite
//! differences on [-1,1]^2. The offline stage greedily selects snapshot
//! parameters driven by one of three indicators (coefficient L1 norm, reduced
//! residual at the collocation set, or full-grid residual norm), orthonormalizes
//! snapshots and residuals by interpolatory Gram-Schmidt, and collects the
//! over-collocation point set. The online stage solves the resulting small
//! least-squares collocation system at a cost independent of the full grid size.
//!
//! Module map:
//! - [`fdm_core`]: grids, fields, sparse stencil operators, restriction.
//! - [`problems`]: the three PDE definitions, parameter domains, residuals,
//!   and linearized iteration operators.
//! - [`truth_solver`]: full-grid Newton / fixed-point solves.
//! - [`offline_greedy`]: greedy model construction, indicators, POD and random
//!   reference bases, model and trace serialization.
//! - [`online_solver`]: reduced least-squares solves and lifting.
//! - [`study_harness`]: experiment drivers (convergence, basis comparison,
//!   timing break-even), truth cache, CSV artifacts.

pub mod error;
pub mod fdm_core;
pub mod linalg;
pub mod offline_greedy;
pub mod online_solver;
pub mod problems;
pub mod study_harness;
pub mod truth_solver;

pub use error::{Result, RocError};
