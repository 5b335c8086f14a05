//! Physics-informed neural network solver for the Kuramoto phase-density
//! transport equation, with a finite-volume reference solver, error metrics
//! and a resumable architecture sweep.

pub mod diff;
pub mod error;
pub mod evalx;
pub mod fvref;
pub mod model;
pub mod net;
pub mod sample;
pub mod sweep;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
