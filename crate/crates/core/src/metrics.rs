//! Point-cloud and image evaluation metrics: Chamfer distance, F-score,
//! masked RMSE/MedAE, PSNR, and SSIM (with an analytic gradient for use as
//! a loss term). Nearest-neighbor queries run on a uniform voxel hash whose
//! results must match brute force exactly.

use std::collections::HashMap;

use glam::DVec3;
use rayon::prelude::*;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// nearest neighbors
// ---------------------------------------------------------------------------

/// Uniform voxel hash over a fixed point set.
pub struct VoxelGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    points: Vec<DVec3>,
    key_min: (i64, i64, i64),
    key_max: (i64, i64, i64),
}

impl VoxelGrid {
    pub fn build(points: &[DVec3], cell: f64) -> Result<VoxelGrid> {
        if points.is_empty() {
            return Err(Error::EmptyInput("voxel grid needs at least one point".into()));
        }
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::Contract("voxel cell size must be positive".into()));
        }
        let key = |p: DVec3| -> (i64, i64, i64) {
            (
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            )
        };
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        let mut key_min = (i64::MAX, i64::MAX, i64::MAX);
        let mut key_max = (i64::MIN, i64::MIN, i64::MIN);
        for (i, &p) in points.iter().enumerate() {
            let k = key(p);
            key_min = (key_min.0.min(k.0), key_min.1.min(k.1), key_min.2.min(k.2));
            key_max = (key_max.0.max(k.0), key_max.1.max(k.1), key_max.2.max(k.2));
            cells.entry(k).or_default().push(i as u32);
        }
        Ok(VoxelGrid { cell, cells, points: points.to_vec(), key_min, key_max })
    }

    /// Pick a cell size so occupancy stays near one point per cell.
    pub fn build_adaptive(points: &[DVec3]) -> Result<VoxelGrid> {
        if points.is_empty() {
            return Err(Error::EmptyInput("voxel grid needs at least one point".into()));
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for &p in points {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        let extent = (hi - lo).max_element();
        let mut cell = extent / (points.len() as f64).cbrt();
        if !(cell > 1e-12) {
            cell = 1.0; // degenerate cloud: everything lands in one cell
        }
        VoxelGrid::build(points, cell)
    }

    #[inline]
    fn key_of(&self, p: DVec3) -> (i64, i64, i64) {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    /// Visit every occupied cell on the Chebyshev ring of radius `r` around
    /// `k`, clipped against the grid's occupied key bounds.
    fn for_ring_cells(&self, k: (i64, i64, i64), r: i64, f: &mut impl FnMut(&[u32])) {
        let mut visit = |key: (i64, i64, i64)| {
            if let Some(ids) = self.cells.get(&key) {
                f(ids);
            }
        };
        if r == 0 {
            visit(k);
            return;
        }
        let (kmin, kmax) = (self.key_min, self.key_max);
        let (ylo, yhi) = ((k.1 - r).max(kmin.1), (k.1 + r).min(kmax.1));
        let (zlo, zhi) = ((k.2 - r).max(kmin.2), (k.2 + r).min(kmax.2));
        for cx in [k.0 - r, k.0 + r] {
            if cx < kmin.0 || cx > kmax.0 {
                continue;
            }
            for cy in ylo..=yhi {
                for cz in zlo..=zhi {
                    visit((cx, cy, cz));
                }
            }
        }
        let (xlo, xhi) = ((k.0 - r + 1).max(kmin.0), (k.0 + r - 1).min(kmax.0));
        for cy in [k.1 - r, k.1 + r] {
            if cy < kmin.1 || cy > kmax.1 {
                continue;
            }
            for cx in xlo..=xhi {
                for cz in zlo..=zhi {
                    visit((cx, cy, cz));
                }
            }
        }
        let (ylo2, yhi2) = ((k.1 - r + 1).max(kmin.1), (k.1 + r - 1).min(kmax.1));
        for cz in [k.2 - r, k.2 + r] {
            if cz < kmin.2 || cz > kmax.2 {
                continue;
            }
            for cx in xlo..=xhi {
                for cy in ylo2..=yhi2 {
                    visit((cx, cy, cz));
                }
            }
        }
    }

    /// First ring around `q`'s cell that can touch an occupied cell, and the
    /// last ring that needs visiting at all.
    fn ring_bounds(&self, k: (i64, i64, i64)) -> (i64, i64) {
        let (kmin, kmax) = (self.key_min, self.key_max);
        let gap = |lo: i64, hi: i64, c: i64| (lo - c).max(c - hi).max(0);
        let span = |lo: i64, hi: i64, c: i64| (c - lo).abs().max((hi - c).abs());
        let start = gap(kmin.0, kmax.0, k.0)
            .max(gap(kmin.1, kmax.1, k.1))
            .max(gap(kmin.2, kmax.2, k.2));
        let last = span(kmin.0, kmax.0, k.0)
            .max(span(kmin.1, kmax.1, k.1))
            .max(span(kmin.2, kmax.2, k.2));
        (start, last)
    }

    /// Exact nearest neighbor via expanding Chebyshev rings of cells. All
    /// occupied cells lie inside the stored key bounds, so the search jumps
    /// straight to the first ring touching that box, walks only ring faces
    /// clipped against it, and stops once the best hit beats the lower
    /// bound (r−1)·cell of the next ring.
    pub fn nearest(&self, q: DVec3) -> (usize, f64) {
        let k = self.key_of(q);
        let (r_start, max_ring) = self.ring_bounds(k);
        let mut best = f64::INFINITY;
        let mut best_i = 0usize;
        for r in r_start..=max_ring {
            if ((r - 1).max(0) as f64) * self.cell > best {
                break;
            }
            self.for_ring_cells(k, r, &mut |ids| {
                for &i in ids {
                    let d = (self.points[i as usize] - q).length();
                    if d < best {
                        best = d;
                        best_i = i as usize;
                    }
                }
            });
        }
        (best_i, best)
    }

    /// The `k` nearest neighbors of `q` (fewer when the set is smaller),
    /// sorted by distance, optionally excluding one index (a query point
    /// asking about its own set).
    pub fn k_nearest(&self, q: DVec3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let key = self.key_of(q);
        let (r_start, max_ring) = self.ring_bounds(key);
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        for r in r_start..=max_ring {
            let bound = if best.len() == k {
                best[k - 1].1
            } else {
                f64::INFINITY
            };
            if ((r - 1).max(0) as f64) * self.cell > bound {
                break;
            }
            self.for_ring_cells(key, r, &mut |ids| {
                for &i in ids {
                    let i = i as usize;
                    if exclude == Some(i) {
                        continue;
                    }
                    let d = (self.points[i] - q).length();
                    if best.len() < k || d < best[k - 1].1 {
                        let at = best.partition_point(|&(_, bd)| bd <= d);
                        best.insert(at, (i, d));
                        best.truncate(k);
                    }
                }
            });
        }
        best
    }

    /// Is any point within `tau` of `q`? Exact when the grid was built with
    /// `cell >= tau` (the 3×3×3 neighborhood then covers the whole ball).
    pub fn any_within(&self, q: DVec3, tau: f64) -> bool {
        debug_assert!(self.cell >= tau);
        let k = self.key_of(q);
        let t2 = tau * tau;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(k.0 + dx, k.1 + dy, k.2 + dz)) {
                        for &i in ids {
                            if (self.points[i as usize] - q).length_squared() <= t2 {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }
}

/// O(n) reference nearest neighbor.
pub fn nearest_brute(points: &[DVec3], q: DVec3) -> (usize, f64) {
    let mut best = f64::INFINITY;
    let mut best_i = 0usize;
    for (i, &p) in points.iter().enumerate() {
        let d = (p - q).length();
        if d < best {
            best = d;
            best_i = i;
        }
    }
    (best_i, best)
}

// ---------------------------------------------------------------------------
// point-set metrics
// ---------------------------------------------------------------------------

/// Symmetric Chamfer distance: mean nearest-neighbor Euclidean distance
/// from A to B plus the mean from B to A (sum of the two directional
/// means — neither averaged nor squared).
pub fn chamfer_distance(a: &[DVec3], b: &[DVec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer distance needs non-empty sets".into()));
    }
    let ga = VoxelGrid::build_adaptive(a)?;
    let gb = VoxelGrid::build_adaptive(b)?;
    let d_ab: Vec<f64> = a.par_iter().map(|&p| gb.nearest(p).1).collect();
    let d_ba: Vec<f64> = b.par_iter().map(|&p| ga.nearest(p).1).collect();
    // sequential sums keep the result independent of thread count
    let mean_ab = d_ab.iter().sum::<f64>() / a.len() as f64;
    let mean_ba = d_ba.iter().sum::<f64>() / b.len() as f64;
    Ok(mean_ab + mean_ba)
}

/// F-score at threshold `tau`: harmonic mean of precision (fraction of A
/// within tau of B) and recall (fraction of B within tau of A); zero when
/// both are zero.
pub fn f_score(a: &[DVec3], b: &[DVec3], tau: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("f-score needs non-empty sets".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Contract("f-score threshold must be positive".into()));
    }
    let ga = VoxelGrid::build(a, tau)?;
    let gb = VoxelGrid::build(b, tau)?;
    let hits_a = a
        .par_iter()
        .map(|&p| gb.any_within(p, tau) as usize)
        .sum::<usize>();
    let hits_b = b
        .par_iter()
        .map(|&p| ga.any_within(p, tau) as usize)
        .sum::<usize>();
    let precision = hits_a as f64 / a.len() as f64;
    let recall = hits_b as f64 / b.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

// ---------------------------------------------------------------------------
// image metrics
// ---------------------------------------------------------------------------

fn masked_pairs<'a>(
    x: &'a [f64],
    y: &'a [f64],
    mask: &'a [bool],
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if x.len() != y.len() || x.len() != mask.len() {
        return Err(Error::ShapeMismatch("image/mask sizes differ".into()));
    }
    Ok(x.iter()
        .zip(y)
        .zip(mask)
        .filter(|&(_, &m)| m)
        .map(|((&a, &b), _)| (a, b)))
}

/// Root mean square error over masked entries.
pub fn rmse(x: &[f64], y: &[f64], mask: &[bool]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in masked_pairs(x, y, mask)? {
        sum += (a - b) * (a - b);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("rmse mask selects no entries".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Median absolute error over masked entries; even counts take the lower
/// middle element.
pub fn medae(x: &[f64], y: &[f64], mask: &[bool]) -> Result<f64> {
    let mut errs: Vec<f64> = masked_pairs(x, y, mask)?
        .map(|(a, b)| (a - b).abs())
        .collect();
    if errs.is_empty() {
        return Err(Error::EmptyInput("medae mask selects no entries".into()));
    }
    errs.sort_unstable_by(f64::total_cmp);
    Ok(errs[(errs.len() - 1) / 2])
}

/// Mean squared error over all entries.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch("image sizes differ".into()));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("mse over empty images".into()));
    }
    let sum: f64 = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / x.len() as f64)
}

/// 10·log10(peak²/mse); +∞ for identical inputs (callers flag it).
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return f64::INFINITY;
    }
    10.0 * ((peak * peak) / mse).log10()
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *wi;
    }
    for wi in &mut w {
        *wi /= sum;
    }
    w
}

/// Valid-region separable convolution with a symmetric kernel: output is
/// (w−10)×(h−10) window sums centered at interior pixels.
fn conv_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let vw = w - 2 * SSIM_RADIUS;
    let vh = h - 2 * SSIM_RADIUS;
    let mut horiz = vec![0.0; vw * h];
    for y in 0..h {
        for vx in 0..vw {
            let mut s = 0.0;
            for (d, &kd) in k.iter().enumerate() {
                s += kd * img[y * w + vx + d];
            }
            horiz[y * vw + vx] = s;
        }
    }
    let mut out = vec![0.0; vw * vh];
    for vy in 0..vh {
        for vx in 0..vw {
            let mut s = 0.0;
            for (d, &kd) in k.iter().enumerate() {
                s += kd * horiz[(vy + d) * vw + vx];
            }
            out[vy * vw + vx] = s;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: scatter a valid-grid field back onto the full
/// image through the same (symmetric, separable) kernel.
fn conv_valid_adjoint(
    field: &[f64],
    w: usize,
    h: usize,
    k: &[f64; SSIM_WINDOW],
) -> Vec<f64> {
    let vw = w - 2 * SSIM_RADIUS;
    let vh = h - 2 * SSIM_RADIUS;
    // vertical spread: (vw × vh) -> (vw × h)
    let mut vert = vec![0.0; vw * h];
    for vy in 0..vh {
        for vx in 0..vw {
            let f = field[vy * vw + vx];
            if f == 0.0 {
                continue;
            }
            for (d, &kd) in k.iter().enumerate() {
                vert[(vy + d) * vw + vx] += kd * f;
            }
        }
    }
    // horizontal spread: (vw × h) -> (w × h)
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for vx in 0..vw {
            let f = vert[y * vw + vx];
            if f == 0.0 {
                continue;
            }
            for (d, &kd) in k.iter().enumerate() {
                out[y * w + vx + d] += kd * f;
            }
        }
    }
    out
}

struct SsimFields {
    vw: usize,
    vh: usize,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    e_xx: Vec<f64>,
    e_yy: Vec<f64>,
    e_xy: Vec<f64>,
}

fn ssim_fields(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<SsimFields> {
    if x.len() != w * h || y.len() != w * h {
        return Err(Error::ShapeMismatch("ssim image sizes differ".into()));
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} images, got {w}×{h}"
        )));
    }
    let k = ssim_kernel();
    let xx: Vec<f64> = x.iter().map(|&v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|&v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
    Ok(SsimFields {
        vw: w - 2 * SSIM_RADIUS,
        vh: h - 2 * SSIM_RADIUS,
        mu_x: conv_valid(x, w, h, &k),
        mu_y: conv_valid(y, w, h, &k),
        e_xx: conv_valid(&xx, w, h, &k),
        e_yy: conv_valid(&yy, w, h, &k),
        e_xy: conv_valid(&xy, w, h, &k),
    })
}

#[inline]
fn ssim_terms(f: &SsimFields, i: usize) -> (f64, f64, f64, f64, f64) {
    let (mx, my) = (f.mu_x[i], f.mu_y[i]);
    let var_x = f.e_xx[i] - mx * mx;
    let var_y = f.e_yy[i] - my * my;
    let cov = f.e_xy[i] - mx * my;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let a1 = 2.0 * mx * my + c1;
    let a2 = 2.0 * cov + c2;
    let b1 = mx * mx + my * my + c1;
    let b2 = var_x + var_y + c2;
    (a1, a2, b1, b2, a1 * a2 / (b1 * b2))
}

/// Mean SSIM over valid (fully interior) 11×11 Gaussian windows, on a
/// single channel with dynamic range [0, 1].
pub fn ssim(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<f64> {
    let f = ssim_fields(x, y, w, h)?;
    let n = f.vw * f.vh;
    let mut sum = 0.0;
    for i in 0..n {
        sum += ssim_terms(&f, i).4;
    }
    Ok(sum / n as f64)
}

/// Mean SSIM plus its gradient with respect to `x`.
pub fn ssim_with_grad(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<(f64, Vec<f64>)> {
    let f = ssim_fields(x, y, w, h)?;
    let n = f.vw * f.vh;
    let inv_n = 1.0 / n as f64;
    // dS/dX_i = Σ_windows w_{i-p}·(alpha_p + beta_p·Y_i + gamma_p·X_i) / n
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    let mut sum = 0.0;
    for i in 0..n {
        let (a1, a2, b1, b2, s) = ssim_terms(&f, i);
        sum += s;
        let (mx, my) = (f.mu_x[i], f.mu_y[i]);
        let ib1b2 = 1.0 / (b1 * b2);
        beta[i] = 2.0 * a1 * ib1b2;
        gamma[i] = -2.0 * s / b2;
        alpha[i] = 2.0 * my * (a2 - a1) * ib1b2 - 2.0 * mx * s / b1 + 2.0 * mx * s / b2;
    }
    let k = ssim_kernel();
    let ga = conv_valid_adjoint(&alpha, w, h, &k);
    let gb = conv_valid_adjoint(&beta, w, h, &k);
    let gc = conv_valid_adjoint(&gamma, w, h, &k);
    let grad: Vec<f64> = (0..w * h)
        .map(|i| inv_n * (ga[i] + gb[i] * y[i] + gc[i] * x[i]))
        .collect();
    Ok((sum * inv_n, grad))
}

/// Per-metric results; `None` marks a metric that was not computable for
/// this evaluation (e.g. no valid pixels). PSNR may be `f64::INFINITY` for
/// identical inputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub cd: Option<f64>,
    pub f_score: Option<f64>,
    pub rmse: Option<f64>,
    pub medae: Option<f64>,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
}
