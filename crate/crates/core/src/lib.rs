//! Simulation and verification laboratory for nonnegative solutions of the
//! one-dimensional stochastic heat equation
//!
//! ```text
//! ∂ₜu = ½Δu + b(u)u + σ(u)Ẇ,   u(0,·) = u₀ ≥ 0.
//! ```
//!
//! The crate is organised bottom-up:
//!
//! * [`field`] – grids, sampled fields, weighted sup norms, heat kernel.
//! * [`coefficients`] – drift/noise families, growth validation, σₙ.
//! * [`semigroup`] – heat and Feynman–Kac semigroups, mild-form residuals.
//! * [`noise`], [`sim`] – counter-addressed white noise and the explicit stepper.
//! * [`slab`] – the slab-freezing approximation and stopping times.
//! * [`particle`] – branching Brownian particles with dyadic density estimates.
//! * [`verify`] – martingale-problem statistics.
//! * [`moments`] – weighted moments, singular Gronwall, kernel estimates, Hölder fits.

pub mod coefficients;
pub mod error;
pub mod expr;
pub mod field;
pub mod moments;
pub mod noise;
pub mod particle;
pub mod semigroup;
pub mod sim;
pub mod slab;
pub mod stats;
pub mod verify;

pub use coefficients::{CatalogId, CoefficientSet, GrowthParams};
pub use error::{Error, Result};
pub use field::{GridSpec, ScalarField, TimeGrid};
pub use sim::{NoiseMode, Scheme, SimOptions, TrajectoryField};
