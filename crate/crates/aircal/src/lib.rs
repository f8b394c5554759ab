//! Calibration of dense low-cost sensor networks against sparse reference
//! monitors, with spatial pooling.
//!
//! The pipeline: fit a per-site observation model on collocated pairs
//! ([`calib`]), invert it per time point, pool the inverted estimates across
//! the network through a Gaussian-process measurement update ([`filter`]),
//! and optionally integrate over parameter uncertainty by MCMC ([`bayes`]).
//! Simulation benchmarks, baselines, and file formats round it out.

pub mod bayes;
pub mod calib;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod filter;
pub mod geo;
pub mod io;
pub mod optim;
pub mod sim;

pub use error::{Error, Result};
