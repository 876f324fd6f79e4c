//! Training loss over rendered camera frames and LiDAR sweeps:
//! photometric L1 + structural dissimilarity, absolute range error,
//! squared intensity and ray-drop error, and a consistency term between
//! rendered normals and normals differentiated from rendered depth.
//! Gradients are assembled per output buffer, ready for the renderer
//! backward passes.

use glam::DVec3;

use crate::error::{Error, Result};
use crate::lidar::{LidarUpstream, RangeImage};
use crate::metrics::{ssim, ssim_with_grad};
use crate::raster::{depth_to_normal, depth_to_normal_backward, FrameBuffer, RasterUpstream};
use crate::sensor::{CameraModel, LidarModel};

/// One posed camera view with its ground-truth color image (row-major,
/// linear RGB in [0,1]).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub cam: CameraModel,
    pub image: Vec<DVec3>,
}

/// One LiDAR sweep with ground-truth ranges, intensities, and the validity
/// mask (false = dropped ray, supervising only the ray-drop head).
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub lidar: LidarModel,
    pub range: Vec<f64>,
    pub intensity: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Observations of the scene at one timestamp; at least one modality must
/// be present.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub timestamp: f64,
    pub cameras: Vec<CameraFrame>,
    pub lidar: Option<LidarFrame>,
}

impl TrainBatch {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() && self.lidar.is_none() {
            return Err(Error::EmptyInput(
                "training batch needs at least one camera or lidar frame".into(),
            ));
        }
        for (i, cf) in self.cameras.iter().enumerate() {
            cf.cam.validate()?;
            if cf.image.len() != cf.cam.width * cf.cam.height {
                return Err(Error::ShapeMismatch(format!(
                    "camera frame {i}: image has {} pixels for a {}×{} camera",
                    cf.image.len(),
                    cf.cam.width,
                    cf.cam.height
                )));
            }
        }
        if let Some(lf) = &self.lidar {
            lf.lidar.validate()?;
            let n = lf.lidar.rows() * lf.lidar.cols;
            if lf.range.len() != n || lf.intensity.len() != n || lf.valid.len() != n {
                return Err(Error::ShapeMismatch(
                    "lidar frame buffers do not match the scan grid".into(),
                ));
            }
            for (i, &r) in lf.range.iter().enumerate() {
                if lf.valid[i] && !(0.0..=lf.lidar.max_range).contains(&r) {
                    return Err(Error::Contract(format!(
                        "ground-truth range {r} at ray {i} outside [0, {}]",
                        lf.lidar.max_range
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Loss term weights; the photometric pair is blended as
/// (1−lambda_r)·L1 + lambda_r·DSSIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_depth: f64,
    pub lambda_intensity: f64,
    pub lambda_raydrop: f64,
    pub lambda_normal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 0.2,
            lambda_depth: 1.0,
            lambda_intensity: 1.0,
            lambda_raydrop: 0.5,
            lambda_normal: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_r,
            self.lambda_depth,
            self.lambda_intensity,
            self.lambda_raydrop,
            self.lambda_normal,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract("loss weights must be non-negative".into()));
        }
        if self.lambda_r > 1.0 {
            return Err(Error::Contract("lambda_r must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Unweighted per-term values plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l1: f64,
    /// 1 − mean SSIM over cameras and channels.
    pub dssim: f64,
    pub depth: f64,
    pub intensity: f64,
    pub raydrop: f64,
    pub normal: f64,
    pub total: f64,
}

/// Upstream gradients for one camera's frame buffer.
pub struct CameraLossGrads {
    pub d_color: Vec<DVec3>,
    pub d_depth: Vec<f64>,
    pub d_alpha: Vec<f64>,
    pub d_normal: Vec<DVec3>,
}

impl CameraLossGrads {
    pub fn upstream(&self) -> RasterUpstream<'_> {
        RasterUpstream {
            d_color: &self.d_color,
            d_depth: &self.d_depth,
            d_alpha: &self.d_alpha,
            d_normal: &self.d_normal,
        }
    }
}

/// Upstream gradients for the traced range image.
pub struct LidarLossGrads {
    pub d_range: Vec<f64>,
    pub d_intensity: Vec<f64>,
    pub d_raydrop: Vec<f64>,
    pub d_alpha: Vec<f64>,
}

impl LidarLossGrads {
    pub fn upstream(&self) -> LidarUpstream<'_> {
        LidarUpstream {
            d_range: &self.d_range,
            d_intensity: &self.d_intensity,
            d_raydrop: &self.d_raydrop,
            d_alpha: &self.d_alpha,
        }
    }
}

pub struct LossGrads {
    pub cameras: Vec<CameraLossGrads>,
    pub lidar: Option<LidarLossGrads>,
}

#[inline]
fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn channel(v: DVec3, c: usize) -> f64 {
    [v.x, v.y, v.z][c]
}

fn channel_mut(v: &mut DVec3, c: usize) -> &mut f64 {
    match c {
        0 => &mut v.x,
        1 => &mut v.y,
        _ => &mut v.z,
    }
}

fn loss_impl(
    frames: &[FrameBuffer],
    sweep: Option<&RangeImage>,
    batch: &TrainBatch,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<LossGrads>)> {
    w.validate()?;
    batch.validate()?;
    if frames.len() != batch.cameras.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rendered frames for {} camera views",
            frames.len(),
            batch.cameras.len()
        )));
    }
    if sweep.is_some() != batch.lidar.is_some() {
        return Err(Error::ShapeMismatch(
            "rendered sweep and ground-truth lidar frame must come together".into(),
        ));
    }
    for (fb, cf) in frames.iter().zip(&batch.cameras) {
        if fb.width != cf.cam.width || fb.height != cf.cam.height {
            return Err(Error::ShapeMismatch(
                "rendered frame size does not match its camera".into(),
            ));
        }
    }

    let mut bd = LossBreakdown::default();
    let mut grads = want_grad.then(|| LossGrads {
        cameras: frames
            .iter()
            .map(|fb| {
                let n = fb.width * fb.height;
                CameraLossGrads {
                    d_color: vec![DVec3::ZERO; n],
                    d_depth: vec![0.0; n],
                    d_alpha: vec![0.0; n],
                    d_normal: vec![DVec3::ZERO; n],
                }
            })
            .collect(),
        lidar: sweep.map(|s| {
            let n = s.rows * s.cols;
            LidarLossGrads {
                d_range: vec![0.0; n],
                d_intensity: vec![0.0; n],
                d_raydrop: vec![0.0; n],
                d_alpha: vec![0.0; n],
            }
        }),
    });

    // --- photometric terms -------------------------------------------------
    let n_cam = frames.len();
    if n_cam > 0 {
        let n_pix_total: usize = frames.iter().map(|fb| fb.width * fb.height).sum();
        let l1_norm = 1.0 / (3.0 * n_pix_total as f64);
        let mut l1_sum = 0.0;
        let mut ssim_sum = 0.0;
        let ssim_norm = 1.0 / (3.0 * n_cam as f64);
        for (ci, (fb, cf)) in frames.iter().zip(&batch.cameras).enumerate() {
            let n = fb.width * fb.height;
            for i in 0..n {
                let e = fb.color[i] - cf.image[i];
                l1_sum += e.x.abs() + e.y.abs() + e.z.abs();
                if let Some(g) = &mut grads {
                    g.cameras[ci].d_color[i] += DVec3::new(sign(e.x), sign(e.y), sign(e.z))
                        * ((1.0 - w.lambda_r) * l1_norm);
                }
            }
            for ch in 0..3 {
                let x: Vec<f64> = fb.color.iter().map(|&v| channel(v, ch)).collect();
                let y: Vec<f64> = cf.image.iter().map(|&v| channel(v, ch)).collect();
                if let Some(g) = &mut grads {
                    let (s, ds) = ssim_with_grad(&x, &y, fb.width, fb.height)?;
                    ssim_sum += s;
                    let scale = -w.lambda_r * ssim_norm;
                    for i in 0..n {
                        *channel_mut(&mut g.cameras[ci].d_color[i], ch) += scale * ds[i];
                    }
                } else {
                    ssim_sum += ssim(&x, &y, fb.width, fb.height)?;
                }
            }
        }
        bd.l1 = l1_sum * l1_norm;
        bd.dssim = 1.0 - ssim_sum * ssim_norm;
    }

    // --- depth-normal consistency ------------------------------------------
    if n_cam > 0 && w.lambda_normal > 0.0 {
        let derived: Vec<Vec<DVec3>> = frames
            .iter()
            .zip(&batch.cameras)
            .map(|(fb, cf)| depth_to_normal(fb, &cf.cam))
            .collect();
        let n_valid: usize = derived
            .iter()
            .map(|nd| nd.iter().filter(|n| n.length_squared() > 0.5).count())
            .sum();
        if n_valid > 0 {
            let norm = 1.0 / n_valid as f64;
            let mut sum = 0.0;
            for (ci, (fb, nd)) in frames.iter().zip(&derived).enumerate() {
                let mut d_nd = want_grad.then(|| vec![DVec3::ZERO; nd.len()]);
                for (i, &n_depth) in nd.iter().enumerate() {
                    if n_depth.length_squared() <= 0.5 {
                        continue;
                    }
                    sum += 1.0 - fb.normal[i].dot(n_depth);
                    if let Some(g) = &mut grads {
                        g.cameras[ci].d_normal[i] += n_depth * (-w.lambda_normal * norm);
                        d_nd.as_mut().unwrap()[i] = fb.normal[i] * (-w.lambda_normal * norm);
                    }
                }
                if let (Some(g), Some(d_nd)) = (&mut grads, d_nd) {
                    let dd = depth_to_normal_backward(fb, &batch.cameras[ci].cam, &d_nd);
                    for (a, b) in g.cameras[ci].d_depth.iter_mut().zip(dd) {
                        *a += b;
                    }
                }
            }
            bd.normal = sum * norm;
        }
    }

    // --- lidar terms --------------------------------------------------------
    if let (Some(s), Some(lf)) = (sweep, &batch.lidar) {
        if s.rows != lf.lidar.rows() || s.cols != lf.lidar.cols {
            return Err(Error::ShapeMismatch(
                "rendered sweep size does not match its scanner".into(),
            ));
        }
        let n_rays = s.rows * s.cols;
        let n_valid = lf.valid.iter().filter(|&&v| v).count();
        let (mut d_sum, mut i_sum, mut r_sum) = (0.0, 0.0, 0.0);
        let v_norm = if n_valid > 0 { 1.0 / n_valid as f64 } else { 0.0 };
        let r_norm = 1.0 / n_rays as f64;
        for i in 0..n_rays {
            if lf.valid[i] {
                let de = s.range[i] - lf.range[i];
                d_sum += de.abs();
                let ie = s.intensity[i] - lf.intensity[i];
                i_sum += ie * ie;
                if let Some(g) = grads.as_mut().and_then(|g| g.lidar.as_mut()) {
                    g.d_range[i] = w.lambda_depth * sign(de) * v_norm;
                    g.d_intensity[i] = w.lambda_intensity * 2.0 * ie * v_norm;
                }
            }
            let gt_drop = if lf.valid[i] { 0.0 } else { 1.0 };
            let re = s.raydrop[i] - gt_drop;
            r_sum += re * re;
            if let Some(g) = grads.as_mut().and_then(|g| g.lidar.as_mut()) {
                g.d_raydrop[i] = w.lambda_raydrop * 2.0 * re * r_norm;
            }
        }
        bd.depth = d_sum * v_norm;
        bd.intensity = i_sum * v_norm;
        bd.raydrop = r_sum * r_norm;
    }

    bd.total = (1.0 - w.lambda_r) * bd.l1
        + w.lambda_r * bd.dssim
        + w.lambda_depth * bd.depth
        + w.lambda_intensity * bd.intensity
        + w.lambda_raydrop * bd.raydrop
        + w.lambda_normal * bd.normal;
    if !bd.total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok((bd, grads))
}

/// Loss value and per-term breakdown.
pub fn compute_loss(
    frames: &[FrameBuffer],
    sweep: Option<&RangeImage>,
    batch: &TrainBatch,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    loss_impl(frames, sweep, batch, w, false).map(|(bd, _)| bd)
}

/// Loss plus upstream gradients on every rendered buffer; the gradients
/// already include the term weights, so they back-propagate the total.
pub fn compute_loss_grad(
    frames: &[FrameBuffer],
    sweep: Option<&RangeImage>,
    batch: &TrainBatch,
    w: &LossWeights,
) -> Result<(LossBreakdown, LossGrads)> {
    loss_impl(frames, sweep, batch, w, true).map(|(bd, g)| (bd, g.unwrap()))
}
