//! Differentiable texture sampling with variance-modulated coordinate
//! gradients, mesh and silhouette reconstruction losses, a small soft
//! rasterizer and Fréchet feature distance.

pub mod error;
pub mod experiments;
pub mod metrics;
pub mod meshkit;
pub mod losses;
pub mod optim;
pub mod sampler;
pub mod softrender;
pub mod tensorgrid;

pub use error::{Error, Result};
