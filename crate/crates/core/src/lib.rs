//! Sequential Monte Carlo (particle filter) library with exact asymptotic
//! variance oracles.
//!
//! The crate is organised around the generic mutation / correction /
//! selection loop:
//!
//! - [`particle`]: weighted particle systems, functionals and the two
//!   estimators (self-normalised weighted mean, plain post-selection mean).
//! - [`resampling`]: multinomial, residual and systematic selection counts.
//! - [`engine`]: filter drivers (SIR, resample-move, SIS, marginal/joint
//!   pairs, independent replicates).
//! - [`models`]: finite HMMs, linear-Gaussian state space models, the
//!   Beta-Bernoulli fixed-parameter model and a marginalisable pair model,
//!   each with an exact oracle.
//! - [`variance`]: exact asymptotic variances on finite and conjugate
//!   models, Dobrushin coefficients and the filtering stability bound.
//!
//! All randomness flows through [`rng::RngStream`], a counter-based ChaCha
//! stream keyed by `(seed, stream id)`, so every run is bit-reproducible
//! regardless of the thread count.

pub mod engine;
pub mod error;
pub mod models;
pub mod par;
pub mod particle;
pub mod resampling;
pub mod rng;
pub mod sum;
pub mod variance;

pub use error::{Result, SmcError};
pub use particle::{Functional, ParticleSystem};
pub use resampling::{SelectionCounts, SelectionScheme};
pub use rng::RngStream;
