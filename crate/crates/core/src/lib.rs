//! Hybrid sensor simulation on 2D Gaussian surfels.
//!
//! A single world representation — oriented, scaled 2D Gaussian primitives
//! with spherical-harmonics color, intensity, and ray-drop — is rendered two
//! ways: a tiled rasterizer for pinhole cameras and a BVH ray tracer for
//! spinning-LiDAR range images. Both paths are differentiable, feeding an
//! inverse-rendering optimizer that fits scenes to observations.

pub mod composite;
pub mod error;
pub mod io;
pub mod lidar;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod raster;
pub mod scene;
pub mod sensor;
pub mod synth;

pub use error::{Error, Result};
