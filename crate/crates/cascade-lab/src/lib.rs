//! Spectral toolkit for wavelet cascade models on the torus with transport noise.
//!
//! The crate is organized around a handful of building blocks:
//!
//! * [`spectral`] - sparse Fourier representations of periodic vector fields,
//!   the Leray projection, Sobolev norms, and frequency-band wavelets.
//! * [`cascade`] - a structure-constant driven bilinear operator that moves
//!   energy across geometric frequency scales while conserving it exactly.
//! * [`shell`] - the scalar shell ODE system induced by the cascade, with an
//!   adaptive integrator that detects both decay and blow-up.
//! * [`noise`] - divergence-free transport noise: radial weight sequences,
//!   complex Brownian drivers, and the associated Stratonovich corrector.
//! * [`spde`] - Galerkin-truncated stochastic evolution combining the pieces,
//!   plus deterministic references (matrix exponentials, fixed-step RK4).
//! * [`hypotheses`] - exact rational feasibility checks for the exponent
//!   bookkeeping that decides which regularity regimes close.
//! * [`acceptance`] - the end-to-end verification battery used by CI and the
//!   `acceptance` subcommand of the bundled binary.
//!
//! Everything downstream of a seed is deterministic: ensembles draw
//! per-trajectory ChaCha streams derived from a master seed and reduce in
//! trajectory order, so reruns produce bit-identical summaries regardless of
//! thread count.

pub mod acceptance;
pub mod cascade;
pub mod config;
pub mod hypotheses;
pub mod linalg;
pub mod noise;
pub mod runner;
pub mod shell;
pub mod spde;
pub mod spectral;
