//! Directed polymers in heavy-tailed random environments.
//!
//! The crate computes partition functions of the 1+1 dimensional directed
//! polymer exactly, solves the discrete and continuum energy–entropy
//! variational problems that describe it at weak coupling, samples the
//! limiting Poisson point process, classifies coupling schedules into their
//! asymptotic regimes, and runs seeded Monte Carlo campaigns that compare the
//! finite systems with their limits.

pub mod continuum;
pub mod elpp;
pub mod environment;
pub mod error;
pub mod experiments;
pub mod io;
pub mod numeric;
pub mod polymer;
pub mod regimes;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
