//! Sensor models: pinhole camera and spinning-LiDAR scan pattern.
//!
//! Conventions, used consistently everywhere:
//! - Camera frame: z forward, x right, y down. `CameraModel::pose` maps
//!   world → camera.
//! - LiDAR sensor frame: x forward, z up. `LidarModel::pose` maps
//!   sensor → world (ray origins at the sensor center).
//! - Pixel/cell samples sit at index + 0.5 on both axes.

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Rigid;

/// A ray; `dir` is unit length for LiDAR rays, while camera pixel rays use
/// the z=1 parameterization so the ray parameter equals camera depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: DVec3,
    pub dir: DVec3,
}

/// Pinhole camera: intrinsics in pixels plus a world-to-camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera transform.
    pub pose: Rigid,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Contract("camera focal lengths must be positive".into()));
        }
        if self.cx < 0.0
            || self.cx >= self.width as f64
            || self.cy < 0.0
            || self.cy >= self.height as f64
        {
            return Err(Error::Contract(
                "camera principal point must lie inside the image".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Contract("camera image must be non-empty".into()));
        }
        Ok(())
    }

    /// Camera-frame direction of the ray through pixel sample (px, py),
    /// z-normalized: depth along the optical axis equals the ray parameter.
    #[inline]
    pub fn pixel_dir_cam(&self, px: f64, py: f64) -> DVec3 {
        DVec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0)
    }

    /// Camera center in world coordinates.
    pub fn center_world(&self) -> DVec3 {
        self.pose.inverse().translation
    }

    /// World-space ray through pixel sample (px, py) with unit direction.
    pub fn pixel_ray_world(&self, px: f64, py: f64) -> Ray {
        let cam_to_world = self.pose.inverse();
        Ray {
            origin: cam_to_world.translation,
            dir: cam_to_world.rotate(self.pixel_dir_cam(px, py)).normalize(),
        }
    }

    /// Project a world point: (px, py, camera depth z). `None` behind the
    /// camera (z ≤ 0).
    pub fn project(&self, p_world: DVec3) -> Option<(f64, f64, f64)> {
        let pc = self.pose.apply(p_world);
        if pc.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
            pc.z,
        ))
    }
}

/// Spinning scanner: `rows` elevation channels swept over a full azimuth
/// revolution in `cols` steps. Produces cylindrical range images laid out
/// row-major, row index following the elevation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarModel {
    /// Per-row elevation angles in radians, strictly monotonic.
    pub elevations: Vec<f64>,
    /// Azimuth steps per revolution (columns).
    pub cols: usize,
    pub max_range: f64,
    /// Sensor-to-world transform for this sweep (one pose per scan; no
    /// within-sweep motion).
    pub pose: Rigid,
}

impl LidarModel {
    /// Evenly spaced elevations over [el_min, el_max] inclusive.
    pub fn uniform(
        rows: usize,
        cols: usize,
        el_min: f64,
        el_max: f64,
        max_range: f64,
        pose: Rigid,
    ) -> Self {
        let elevations = if rows == 1 {
            vec![0.5 * (el_min + el_max)]
        } else {
            (0..rows)
                .map(|r| el_min + (el_max - el_min) * r as f64 / (rows - 1) as f64)
                .collect()
        };
        LidarModel { elevations, cols, max_range, pose }
    }

    pub fn rows(&self) -> usize {
        self.elevations.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.elevations.is_empty() || self.cols == 0 {
            return Err(Error::Contract("lidar scan grid must be non-empty".into()));
        }
        let increasing = self.elevations.windows(2).all(|w| w[1] > w[0]);
        let decreasing = self.elevations.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::Contract(
                "lidar elevation angles must be strictly monotonic".into(),
            ));
        }
        if self.max_range <= 0.0 {
            return Err(Error::Contract("lidar max range must be positive".into()));
        }
        Ok(())
    }

    /// Azimuth of a column sample, in [−π, π); symmetric about zero so the
    /// ±π seam falls between columns.
    #[inline]
    pub fn azimuth(&self, col: usize) -> f64 {
        -std::f64::consts::PI
            + (col as f64 + 0.5) * std::f64::consts::TAU / self.cols as f64
    }

    /// Unit direction in the sensor frame (x forward, z up).
    #[inline]
    pub fn direction_sensor(elevation: f64, azimuth: f64) -> DVec3 {
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        DVec3::new(ce * ca, ce * sa, se)
    }

    /// World-space ray for cell (row, col).
    #[inline]
    pub fn ray(&self, row: usize, col: usize) -> Ray {
        let d = Self::direction_sensor(self.elevations[row], self.azimuth(col));
        Ray {
            origin: self.pose.translation,
            dir: self.pose.rotate(d),
        }
    }

    /// All rays, row-major (row * cols + col).
    pub fn generate_rays(&self) -> Vec<Ray> {
        let mut rays = Vec::with_capacity(self.rows() * self.cols);
        for row in 0..self.rows() {
            for col in 0..self.cols {
                rays.push(self.ray(row, col));
            }
        }
        rays
    }
}
