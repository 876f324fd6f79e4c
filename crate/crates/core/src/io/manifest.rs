//! Dataset manifest: a JSON index tying timestamps to sensor models and the
//! image / scan files they reference.
//!
//! Invariants: frame timestamps strictly increase, every frame carries at
//! least one sensor (and at most one lidar sweep), and every referenced
//! path is relative to the manifest's directory without escaping it.

use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{CameraFrame, LidarFrame, TrainBatch};
use crate::sensor::{CameraModel, LidarModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cameras: Vec<CameraEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lidars: Vec<LidarEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub camera: CameraModel,
    /// 8-bit RGB image, relative path.
    pub image: String,
    /// Optional `DA` plane file; depth is kept out of the quantized image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarEntry {
    pub lidar: LidarModel,
    /// `DIRA` plane file, relative path.
    pub scan: String,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Manifest("no frames".into()));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if !frame.timestamp.is_finite() {
                return Err(Error::Manifest(format!("frame {i}: non-finite timestamp")));
            }
            if i > 0 && frame.timestamp <= self.frames[i - 1].timestamp {
                return Err(Error::Manifest(format!(
                    "frame {i}: timestamps must strictly increase"
                )));
            }
            if frame.cameras.is_empty() && frame.lidars.is_empty() {
                return Err(Error::Manifest(format!("frame {i}: no sensors")));
            }
            if frame.lidars.len() > 1 {
                return Err(Error::Manifest(format!(
                    "frame {i}: at most one lidar sweep per frame"
                )));
            }
            for entry in &frame.cameras {
                entry.camera.validate()?;
                check_relative(&entry.image)?;
                if let Some(depth) = &entry.depth {
                    check_relative(depth)?;
                }
            }
            for entry in &frame.lidars {
                entry.lidar.validate()?;
                check_relative(&entry.scan)?;
            }
        }
        Ok(())
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }
}

fn check_relative(path: &str) -> Result<()> {
    let p = Path::new(path);
    if path.is_empty() || p.is_absolute() {
        return Err(Error::Manifest(format!(
            "path '{path}' must be relative to the manifest"
        )));
    }
    if p.components().any(|c| matches!(c, Component::ParentDir)) {
        return Err(Error::Manifest(format!(
            "path '{path}' escapes the dataset directory"
        )));
    }
    Ok(())
}

/// Directory the manifest's relative paths resolve against.
pub fn base_dir(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    let mut json = serde_json::to_vec_pretty(manifest)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    json.push(b'\n');
    super::atomic_write(path, &json)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = std::fs::read(path)?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::Manifest(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Load a manifest and every file it references into training batches.
/// Image and scan shapes must match their sensor models; lidar validity
/// comes from the stored alpha and ray-drop planes.
pub fn load_batches(manifest_path: &Path) -> Result<Vec<TrainBatch>> {
    let manifest = load_manifest(manifest_path)?;
    let base = base_dir(manifest_path);
    let mut batches = Vec::with_capacity(manifest.frames.len());
    for frame in &manifest.frames {
        let mut cameras = Vec::with_capacity(frame.cameras.len());
        for entry in &frame.cameras {
            let (w, h, image) = super::png::load_rgb(&base.join(&entry.image))?;
            if w != entry.camera.width || h != entry.camera.height {
                return Err(Error::Manifest(format!(
                    "image '{}' is {w}x{h}, camera expects {}x{}",
                    entry.image, entry.camera.width, entry.camera.height
                )));
            }
            cameras.push(CameraFrame { cam: entry.camera.clone(), image });
        }
        let mut lidar = None;
        for entry in &frame.lidars {
            let img = super::planes::read_range_image(&base.join(&entry.scan))?;
            if img.rows != entry.lidar.rows() || img.cols != entry.lidar.cols {
                return Err(Error::Manifest(format!(
                    "scan '{}' is {}x{}, lidar expects {}x{}",
                    entry.scan,
                    img.rows,
                    img.cols,
                    entry.lidar.rows(),
                    entry.lidar.cols
                )));
            }
            let valid = (0..img.rows * img.cols).map(|i| img.ray_valid(i)).collect();
            lidar = Some(LidarFrame {
                lidar: entry.lidar.clone(),
                range: img.range,
                intensity: img.intensity,
                valid,
            });
        }
        let batch = TrainBatch { timestamp: frame.timestamp, cameras, lidar };
        batch.validate()?;
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rigid;

    fn camera() -> CameraModel {
        CameraModel {
            fx: 40.0,
            fy: 40.0,
            cx: 16.0,
            cy: 12.0,
            width: 32,
            height: 24,
            pose: Rigid::IDENTITY,
        }
    }

    fn lidar() -> LidarModel {
        LidarModel::uniform(4, 16, -0.2, 0.2, 50.0, Rigid::IDENTITY)
    }

    fn sample() -> DatasetManifest {
        DatasetManifest {
            frames: vec![
                FrameEntry {
                    timestamp: 0.0,
                    cameras: vec![CameraEntry {
                        camera: camera(),
                        image: "frames/cam0.png".into(),
                        depth: Some("frames/cam0_depth.fpl".into()),
                    }],
                    lidars: vec![LidarEntry { lidar: lidar(), scan: "frames/sweep0.fpl".into() }],
                },
                FrameEntry {
                    timestamp: 0.5,
                    cameras: Vec::new(),
                    lidars: vec![LidarEntry { lidar: lidar(), scan: "frames/sweep1.fpl".into() }],
                },
            ],
        }
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = sample();
        save_manifest(&path, &m).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn validation_catches_bad_manifests() {
        let mut m = sample();
        m.frames[1].timestamp = 0.0;
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));

        let mut m = sample();
        m.frames[0].cameras[0].image = "/abs/cam.png".into();
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));

        let mut m = sample();
        m.frames[0].cameras[0].image = "../escape.png".into();
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));

        let mut m = sample();
        m.frames[1].cameras.clear();
        m.frames[1].lidars.clear();
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));

        let mut m = sample();
        let dup = m.frames[0].lidars[0].clone();
        m.frames[0].lidars.push(dup);
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));

        assert!(DatasetManifest { frames: Vec::new() }.validate().is_err());
    }

    #[test]
    fn load_batches_reads_referenced_files() {
        use crate::lidar::RangeImage;
        use glam::DVec3;

        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("frames")).unwrap();
        let cam = camera();
        let li = lidar();

        let image: Vec<DVec3> = (0..cam.width * cam.height)
            .map(|i| DVec3::splat((i % 255) as f64 / 255.0))
            .collect();
        super::super::png::save_rgb(
            &dir.path().join("frames/cam0.png"),
            cam.width,
            cam.height,
            &image,
        )
        .unwrap();

        let mut sweep = RangeImage::new(li.rows(), li.cols);
        for i in 0..sweep.range.len() {
            sweep.range[i] = 5.0;
            sweep.intensity[i] = 0.5;
            sweep.raydrop[i] = if i == 3 { 0.9 } else { 0.1 };
            sweep.alpha[i] = 1.0;
        }
        super::super::planes::write_range_image(&dir.path().join("frames/sweep0.fpl"), &sweep)
            .unwrap();
        super::super::planes::write_range_image(&dir.path().join("frames/sweep1.fpl"), &sweep)
            .unwrap();

        let mut m = sample();
        m.frames[0].cameras[0].depth = None;
        let path = dir.path().join("manifest.json");
        save_manifest(&path, &m).unwrap();

        let batches = load_batches(&path).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].cameras.len(), 1);
        let lf = batches[0].lidar.as_ref().unwrap();
        assert_eq!(lf.range[0], 5.0);
        assert!(lf.valid[0]);
        assert!(!lf.valid[3]);
        assert_eq!(batches[1].cameras.len(), 0);

        // Pixel values survive the 8-bit quantization within half a step.
        let loaded = &batches[0].cameras[0].image;
        for (a, b) in loaded.iter().zip(&image) {
            assert!((a.x - b.x).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
