//! Unsupervised change detection between images from different sensors.

pub mod affinity;
pub mod change;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod synthetic;
pub mod theory;
pub mod translators;

pub use error::{Error, Result};
