//! Mean Euler characteristic and excursion probabilities of smooth Gaussian
//! fields with stationary increments on rectangles, with a Monte Carlo oracle.

pub mod error;
pub mod field;
pub mod gauss;
pub mod geometry;
pub mod mc;
pub mod mec;
pub mod quad;
pub mod validation;

pub use error::{Error, Result};
