//! Identifiability analysis for binary NRTL vapor-liquid equilibrium models:
//! bubble-point thermodynamics, sensitivities, weighted least squares,
//! subset-selection regularization, optimal experimental design and the
//! Monte Carlo harnesses that tie them together.

pub mod dual;
pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod model;
pub mod montecarlo;
pub mod oed;
pub mod regularization;
pub mod sensitivity;
pub mod stats;
pub mod thermo;

pub use error::{Error, Result};
