//! Tools for finite-dimensional stochastic systems with a bilinear nonlinearity,
//!
//! ```text
//! dU + (nu * A U + B(U, U)) dt = sigma dW,      U in R^N,
//! ```
//!
//! driven by a d-dimensional Brownian motion with d typically much smaller
//! than N. The model class is pinned down by two structural conditions: the
//! linear part is coercive, `<nu * A U, U> >= alpha |U|^2` with `alpha > 0`,
//! and the bilinear term moves energy around without creating it,
//! `<B(V, U), U> = 0`. Everything else in the crate leans on those two facts.
//!
//! What lives where:
//!
//! * [`model`]: the [`model::BilinearModel`] type, structural validation,
//!   and the three-mode interaction model; [`galerkin`] adds a spectral
//!   truncation of the 2-d Navier-Stokes vorticity equation.
//! * [`sde`]: explicit and semi-implicit Euler integrators, counter-based
//!   Gaussian noise so ensembles are reproducible under any parallel
//!   schedule, discrete energy bookkeeping, and moment tail probes.
//! * [`brackets`]: polynomial vector fields, Lie brackets, and the two
//!   bracket ladders used to test pointwise span conditions of
//!   hypoellipticity type.
//! * [`variational`]: the linearization (Jacobian) flow along a simulated
//!   path, its adjoint, and the second variation.
//! * [`malliavin`]: the Gram matrix of the noise-to-state response, its
//!   spectrum, and minimum-energy controls for the linearized dynamics.
//! * [`ergodics`]: occupation measures, ergodic averages, generator
//!   residuals, and probes for mixing, irreducibility, and gradient
//!   estimates.
//!
//! The pieces compose: simulate a path, linearize along it, assemble the
//! Gram matrix, and check that the noise directions plus their brackets
//! explain what the spectrum says.

pub mod brackets;
pub mod ergodics;
pub mod error;
pub mod format;
pub mod galerkin;
pub mod malliavin;
pub mod model;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod tensor;
pub mod variational;

pub use error::Error;
pub use model::BilinearModel;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
