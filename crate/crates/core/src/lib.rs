//! Cross-view LiDAR 3-D object detection.
//!
//! A sweep is projected into a range image; range-view and point-wise
//! features are exchanged at several depths, scattered into a slice-pillar
//! bird's-eye-view volume, and decoded by a sparse anchor head.

pub mod bev;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod head;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
