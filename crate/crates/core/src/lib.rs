//! Langevin samplers over isotropic Gaussian mixtures.
//!
//! The crate is organised bottom-up:
//!
//! - [`mixture`]: mixture models with exact log-densities, scores and
//!   responsibilities evaluated in log space, Gaussian perturbation and
//!   direct sampling.
//! - [`conditional`]: closed-form prefix-conditional patch distributions,
//!   used as an exact conditional score oracle.
//! - [`samplers`]: vanilla, annealed and chained Langevin dynamics with
//!   geometric noise schedules and deterministic per-chain random streams.
//! - [`analysis`]: mode clustering, null-space decomposition of mean
//!   offsets, mode-seeking thresholds, assumption checks, escape scans and
//!   sample-based distances.

pub mod analysis;
pub mod conditional;
mod error;
pub mod mixture;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
pub use mixture::{GaussianComponent, MixtureModel, SampleBatch};
