//! Physics-informed neural surrogate for double porosity/permeability flow.

pub mod adapt;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod invert;
pub mod loss;
pub mod net;
pub mod oracle;
pub mod physics;
pub mod presets;
pub mod problem;
pub mod rng;
pub mod train;

pub use error::{DppError, Result};
