//! Small-noise Lévy-driven dissipative SDEs and their Wasserstein cutoff.
//!
//! The drift `b` lives in [`vector_fields`], the noise in [`levy_noise`],
//! integrators in [`sde_sim`], transport estimators in [`wasserstein`],
//! linearization data in [`spectral`] and the experiments that put them
//! together in [`cutoff_experiments`].

pub mod cutoff_experiments;
pub mod error;
pub mod levy_noise;
pub mod rng;
pub mod sde_sim;
pub mod spectral;
pub mod vector_fields;
pub mod wasserstein;

pub use error::{Error, Result};
