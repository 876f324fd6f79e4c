//! On-disk formats and filesystem plumbing: the versioned binary scene
//! container, float-plane range images, dataset manifests, PLY clouds,
//! key=value run configs and metric reports, plus atomic writes and an
//! output-directory lock.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub mod config;
pub mod manifest;
pub mod planes;
pub mod ply;
pub mod png;
pub mod report;
pub mod scene_file;

pub use config::{load_run_config, parse_run_config, RunConfig};
pub use manifest::{
    load_batches, load_manifest, save_manifest, CameraEntry, DatasetManifest, FrameEntry,
    LidarEntry,
};
pub use planes::{read_planes, write_planes, PlaneSet};
pub use ply::{read_ply, write_ply, PlyFormat};
pub use png::{load_rgb, save_rgb};
pub use report::{format_report, parse_report, write_report};
pub use scene_file::{parse_scene, read_scene_file, serialize_scene, write_scene_file};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write `bytes` to `path` atomically: the data lands in a sibling temp
/// file first and is renamed into place, so readers never observe a torn
/// file and an interrupted write leaves the old content intact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Contract(format!("cannot write to '{}'", path.display())))?;
    let tag = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(
        ".{}.{}-{tag}.tmp",
        name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// Exclusive marker for an output directory. Concurrent invocations writing
/// into the same directory are unsupported; the second acquisition fails
/// fast instead of letting two runs interleave files. Released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub const FILE_NAME: &'static str = ".splatsim.lock";

    /// Create `dir` if needed and take its lock. Fails with [`Error::Locked`]
    /// when another invocation already holds it (a stale file from a killed
    /// run must be removed by hand; the file records the owning pid).
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir)?;
        let path = dir.join(Self::FILE_NAME);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(dir.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
