//! Numerical laboratory for the KPZ equation on the unit torus.
//!
//! The crate is organised around a stochastic-control view of the equation
//! `(d/dt - lap/2) h = |dh|^2/2 + noise` with a renormalisation constant
//! subtracted from the nonlinearity. The pieces:
//!
//! * [`grid`]: periodic grids, sampled fields, space-time fields.
//! * [`spectral`]: FFT-backed derivative, heat semigroup, Hoelder seminorms.
//! * [`noise`]: white-noise cells, sharp spatial mollification, the
//!   enhanced-noise trees and their renormalisation constant.
//! * [`snapshot`]: binary snapshots of enhanced noise for replay.
//! * [`pde`]: exponential-integrator solvers for the backward equation with
//!   rough drift and for KPZ itself (Cole-Hopf in log space and direct).
//! * [`hopflax`]: the noise-free variational solution and one-sided
//!   concavity diagnostics.
//! * [`control`]: controlled path ensembles, the variational identity for
//!   log-Laplace functionals, conditioned bridges and entropies.
//! * [`zvonkin`]: the drift-removing change of variables and law checks.
//! * [`kernel`]: kernel density estimation, Gaussian envelope fits, torus
//!   heat-kernel bounds and gradient ratios.
//! * [`experiments`]: reproducible experiment drivers (lower bounds,
//!   oscillation, Harnack, Hopf-Lax suite) emitting serialisable reports.
//!
//! All randomness flows through counter-mode ChaCha streams keyed by
//! `(seed, stream)` so every result is reproducible bit for bit across
//! runs and thread counts.

pub mod control;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod hopflax;
pub mod kernel;
pub mod noise;
pub mod pde;
pub mod rng;
pub mod snapshot;
pub mod spectral;
pub mod stats;
pub mod zvonkin;

pub use error::{Error, Result};
pub use grid::{SpaceTimeField, TorusField, TorusGrid};
pub use noise::{EnhancedNoise, NoiseRealization};
