//! Bayesian calibration of computer models with informative simulator
//! failures.
//!
//! The crate couples two GP models: a Kennedy–O'Hagan joint model of field
//! observations and successful simulator runs, and a clipped-GP classifier
//! fit to the success/failure pattern of the runs. A selection-model prior
//! restricts the calibration parameters to the region the classifier
//! predicts as successful, with the coupled posterior explored by
//! Metropolis-within-Gibbs sampling.

pub mod calibration;
pub mod classifier;
pub mod config;
pub mod coupled;
pub mod design;
pub mod error;
pub mod io;
pub mod kernels;
pub mod mcmc;
pub mod priors;
pub mod toy;

pub use error::{Error, Result};
