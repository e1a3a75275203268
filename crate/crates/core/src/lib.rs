//! Pose-to-motion retargeting.
//!
//! Transfers motion from a source character that has motion capture clips to a
//! target character that only has a set of static poses. The crate contains the
//! kinematic data model, BVH input and output, a compact reverse-mode autodiff
//! engine, skeleton-aware networks, the asymmetric cycle training loop and the
//! evaluation metrics.

pub mod autodiff;
pub mod bvh;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod metrics;
pub mod motion;
pub mod nets;
pub mod rotation;
pub mod skeleton;
pub mod training;

pub use error::{Error, Result};
