//! Just-recognizable-difference (JRD) prediction with a vision transformer,
//! Gaussian soft-label training, and a JRD-driven per-CTU QP allocation
//! pipeline with its evaluation metrics.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod trainer;
pub mod vcm;

pub use error::{Error, Result};
