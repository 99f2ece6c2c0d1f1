//! Time-varying oscillating feedback for partial stabilization of
//! control-affine systems along a reference curve, with a sample-and-hold
//! simulator and numerical checks of the stability certificate.

pub mod auv;
pub mod config;
pub mod controller;
pub mod curve;
pub mod error;
pub mod integrator;
pub mod lie;
pub mod runner;
pub mod stability;
pub mod system;
pub mod tube;

pub use error::{Error, Result};
pub use system::{ControlAffineSystem, State, StateSplit};
