//! Active 3D reconstruction with Gaussian splats on the CPU.
//!
//! The crate provides a forward splat rasterizer, a per-splat
//! reliability belief filter, an expected mutual-information metric for
//! scoring candidate viewpoints, closed-form minimum-snap motion
//! primitives, a synthetic active-reconstruction loop, and the
//! evaluation metrics and file formats used by the `splatmi` binary.

pub mod belief;
pub mod config;
pub mod error;
pub mod gauss_mi;
pub mod imgio;
pub mod mapio;
pub mod metrics;
pub mod optim;
pub mod planner;
pub mod render;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};
