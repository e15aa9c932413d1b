//! Desk-scale experiments driven by the command line: gradient collapse,
//! flow recovery, silhouette fitting, FID between image sets and the
//! finite-difference gradient suite.

pub mod collapse;
pub mod config;
pub mod fid;
pub mod flow_recover;
pub mod gradcheck;
pub mod report;
pub mod silhouette_fit;

pub use config::{Experiment, ExperimentConfig};
pub use report::Report;

/// Inverse of [`crate::sampler::denormalize`].
pub fn pixel_to_normalized(p: f64, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * p / (extent - 1) as f64 - 1.0
    }
}
