//! 2D simulator for the nonlocal Cahn-Hilliard-Brinkman (CHB) system and its
//! vanishing-viscosity Cahn-Hilliard-Hele-Shaw (CHHS) limit.
//!
//! The phase field `phi` evolves by the convective nonlocal Cahn-Hilliard
//! equation
//!
//! ```text
//! phi_t = lap(mu) - div(u phi),      mu = a phi + F'(phi) - J * phi
//! ```
//!
//! with no-flux boundary conditions, where `J` is an interaction kernel,
//! `a(x) = int_Omega J(x-y) dy`, and `F` a double-well potential. The velocity
//! solves either the Brinkman problem
//!
//! ```text
//! -div(nu(phi) grad u) + eta u + grad p = mu grad(phi) + h,   div u = 0,  u = 0 on the boundary
//! ```
//!
//! or its Darcy (Hele-Shaw) limit `eta u + grad p = mu grad(phi) + h` with
//! `u . n = 0`. Everything is discretized on a uniform MAC grid whose
//! gradient and divergence are exact discrete adjoints, so mass conservation,
//! energy dissipation, H^{-1}-type norm estimates and the Brinkman-to-Darcy
//! viscosity limit are all measurable to round-off or to quantified rates.
//!
//! Crate layout mirrors the solver pipeline: [`grid`] holds fields and the
//! discrete calculus, [`transforms`]/[`poisson`] the fast cosine/sine
//! diagonalizations, [`kernel`]/[`conv`] the nonlocal operators, [`potential`]
//! the double-well and its convex splitting, [`ch`] the phase-field stepper,
//! [`flow`] the Brinkman/Darcy solvers, [`system`] the coupled time loop, and
//! [`experiments`] the viscosity-sweep / perturbation-probe / selftest
//! drivers behind the CLI.

pub mod ch;
pub mod config;
pub mod conv;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod grid;
pub mod kernel;
pub mod ops;
pub(crate) mod par;
pub mod poisson;
pub mod potential;
pub mod snapshot;
pub mod system;
pub mod transforms;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
