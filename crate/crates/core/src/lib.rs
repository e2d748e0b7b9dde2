//! Face geometry, reflectance and illumination fitting with a differentiable
//! Monte-Carlo ray tracer and a virtual light stage.

pub mod brdf;
pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod grad;
pub mod imageio;
pub mod math;
pub mod morphable;
pub mod optimizer;
pub mod scene;
pub mod synthetic;
pub mod tracer;

pub use error::{Error, Result};
