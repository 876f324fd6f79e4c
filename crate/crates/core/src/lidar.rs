//! BVH-accelerated ray tracing of splat scenes into spinning-lidar range
//! images (expected range, intensity, ray-drop probability).
//!
//! Each splat's 3σ footprint is bounded by two proxy triangles; a binned-SAH
//! BVH over those triangles drives traversal. Actual intersections are the
//! exact ray–plane solves against the splat disks (the triangles only cull).
//! Per ray, hits are consumed in strict (t, primitive-id) order through a
//! bounded k-buffer: collect the k nearest hits past the resume point,
//! blend them front to back, and repeat until the ray saturates or runs out
//! of hits. Results are identical for any k ≥ 1 and match the brute-force
//! global-sort oracle.

use std::collections::BTreeMap;

use glam::DVec3;
use rayon::prelude::*;

use crate::composite::{
    composite_backward, composite_forward, Hit, ALPHA_CUTOFF, ALPHA_MAX, MAX_RADIUS_SQ,
    TRANSMITTANCE_MIN,
};
use crate::error::{Error, Result};
use crate::math::{sigmoid, Aabb};
use crate::model::{gaussian_value, sh_basis, sh_coeff_count, SplatGrad, SH_COEFFS};
use crate::raster::ALPHA_VALID;
use crate::scene::FlatScene;
use crate::sensor::LidarModel;

/// Composited lidar channels: range, intensity, ray-drop.
const CH: usize = 3;

const LEAF_SIZE: usize = 4;
const MAX_DEPTH: usize = 64;
const SAH_BINS: usize = 16;

/// Number of fixed ray chunks the backward pass reduces over; independent
/// of the worker thread count so gradients are bitwise reproducible.
const BACKWARD_CHUNKS: usize = 16;

/// Per-ray render targets, row-major `rows × cols`. `range` is
/// alpha-weighted expected range without renormalization (sentinel 0 where
/// nothing was hit); `raydrop` is the blended drop probability.
#[derive(Debug, Clone)]
pub struct RangeImage {
    pub rows: usize,
    pub cols: usize,
    pub range: Vec<f64>,
    pub intensity: Vec<f64>,
    pub raydrop: Vec<f64>,
    pub alpha: Vec<f64>,
    pub n_contrib: Vec<u32>,
}

impl RangeImage {
    pub fn new(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        RangeImage {
            rows,
            cols,
            range: vec![0.0; n],
            intensity: vec![0.0; n],
            raydrop: vec![0.0; n],
            alpha: vec![0.0; n],
            n_contrib: vec![0; n],
        }
    }

    /// A ray carries a real surface return when enough opacity accumulated
    /// and the blended drop probability stays below one half.
    #[inline]
    pub fn ray_valid(&self, i: usize) -> bool {
        self.alpha[i] >= ALPHA_VALID && self.raydrop[i] < 0.5
    }
}

/// Splat ready for world-frame ray intersection.
struct WorldSplat {
    center: DVec3,
    q_u: DVec3,
    q_v: DVec3,
    normal: DVec3,
    inv_su: f64,
    inv_sv: f64,
    alpha: f64,
}

fn world_splats(flat: &FlatScene) -> Vec<WorldSplat> {
    flat.splats
        .iter()
        .map(|g| {
            let act = g.activate();
            WorldSplat {
                center: g.center,
                q_u: g.tangent_u,
                q_v: g.tangent_v,
                normal: g.tangent_u.cross(g.tangent_v),
                inv_su: 1.0 / act.scale_u,
                inv_sv: 1.0 / act.scale_v,
                alpha: act.alpha,
            }
        })
        .collect()
}

#[derive(Clone, Copy)]
struct BvhNode {
    aabb: Aabb,
    /// Leaf: first index into `tris`. Inner: left child.
    a: u32,
    /// Leaf: triangle count. Inner: right child.
    b: u32,
    leaf: bool,
}

/// Bounding-volume hierarchy over the per-splat proxy triangles
/// (two per splat, covering the 3σ rectangle).
pub struct Bvh {
    nodes: Vec<BvhNode>,
    tris: Vec<u32>,
}

impl Bvh {
    pub fn build(flat: &FlatScene) -> Bvh {
        let n = flat.len();
        let mut boxes = Vec::with_capacity(2 * n);
        let mut centroids = Vec::with_capacity(2 * n);
        for g in &flat.splats {
            let act = g.activate();
            let e1 = g.tangent_u * (3.0 * act.scale_u);
            let e2 = g.tangent_v * (3.0 * act.scale_v);
            let c00 = g.center - e1 - e2;
            let c10 = g.center + e1 - e2;
            let c11 = g.center + e1 + e2;
            let c01 = g.center - e1 + e2;
            for tri in [[c00, c10, c11], [c00, c11, c01]] {
                let b = Aabb::from_points(&tri);
                centroids.push(b.centroid());
                boxes.push(b);
            }
        }
        let mut tris: Vec<u32> = (0..2 * n as u32).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            build_node(&boxes, &centroids, &mut tris, 0, 2 * n, 0, &mut nodes);
        }
        Bvh { nodes, tris }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Recursively build the subtree over `tris[lo..hi]`; returns its node id.
fn build_node(
    boxes: &[Aabb],
    centroids: &[DVec3],
    tris: &mut [u32],
    lo: usize,
    hi: usize,
    depth: usize,
    nodes: &mut Vec<BvhNode>,
) -> u32 {
    let mut aabb = Aabb::EMPTY;
    let mut cbox = Aabb::EMPTY;
    for &t in &tris[lo..hi] {
        aabb.grow_box(&boxes[t as usize]);
        cbox.grow_point(centroids[t as usize]);
    }
    let id = nodes.len() as u32;
    nodes.push(BvhNode { aabb, a: lo as u32, b: (hi - lo) as u32, leaf: true });
    let count = hi - lo;
    if count <= LEAF_SIZE || depth >= MAX_DEPTH {
        return id;
    }
    let extent = cbox.max - cbox.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let span = extent[axis];
    let mut mid = lo + count / 2;
    if span > 1e-12 {
        // binned SAH along the widest centroid axis
        let inv = SAH_BINS as f64 / span;
        let bin_of = |t: u32| -> usize {
            (((centroids[t as usize][axis] - cbox.min[axis]) * inv) as usize)
                .min(SAH_BINS - 1)
        };
        let mut bin_count = [0usize; SAH_BINS];
        let mut bin_box = [Aabb::EMPTY; SAH_BINS];
        for &t in &tris[lo..hi] {
            let b = bin_of(t);
            bin_count[b] += 1;
            bin_box[b].grow_box(&boxes[t as usize]);
        }
        let mut best_cost = f64::INFINITY;
        let mut best_split = SAH_BINS; // split point: bins [0,split) go left
        let mut left_box = Aabb::EMPTY;
        let mut left_count = 0usize;
        let mut left_costs = [(0usize, 0.0f64); SAH_BINS];
        for s in 1..SAH_BINS {
            left_box.grow_box(&bin_box[s - 1]);
            left_count += bin_count[s - 1];
            left_costs[s] = (left_count, left_box.surface_area());
        }
        let mut right_box = Aabb::EMPTY;
        let mut right_count = 0usize;
        for s in (1..SAH_BINS).rev() {
            right_box.grow_box(&bin_box[s]);
            right_count += bin_count[s];
            let (lc, la) = left_costs[s];
            if lc == 0 || right_count == 0 {
                continue;
            }
            let cost = la * lc as f64 + right_box.surface_area() * right_count as f64;
            if cost < best_cost {
                best_cost = cost;
                best_split = s;
            }
        }
        if best_split < SAH_BINS {
            let part = partition(&mut tris[lo..hi], |t| bin_of(t) < best_split);
            mid = lo + part;
        } else {
            // all centroids in one bin — order-preserving median fallback
        }
    }
    if mid == lo || mid == hi {
        mid = lo + count / 2;
    }
    let left = build_node(boxes, centroids, tris, lo, mid, depth + 1, nodes);
    let right = build_node(boxes, centroids, tris, mid, hi, depth + 1, nodes);
    nodes[id as usize] = BvhNode {
        aabb: nodes[id as usize].aabb,
        a: left,
        b: right,
        leaf: false,
    };
    id
}

/// Stable partition: elements satisfying `pred` first; returns their count.
fn partition(v: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut keep: Vec<u32> = Vec::with_capacity(v.len());
    let mut rest: Vec<u32> = Vec::new();
    for &t in v.iter() {
        if pred(t) {
            keep.push(t);
        } else {
            rest.push(t);
        }
    }
    let split = keep.len();
    v[..split].copy_from_slice(&keep);
    v[split..].copy_from_slice(&rest);
    split
}

/// A gated ray–splat hit (world frame).
struct RayHit {
    t: f64,
    u: f64,
    v: f64,
    g: f64,
    a: f64,
    denom: f64,
    /// Hit point minus splat center.
    d: DVec3,
}

/// Shared support rule: plane hit with t in (0, max_range], inside the 3σ
/// disk, contribution above the cutoff.
#[inline]
fn gate_ray_hit(ws: &WorldSplat, o: DVec3, e: DVec3, max_range: f64) -> Option<RayHit> {
    let denom = e.dot(ws.normal);
    if denom.abs() <= 1e-12 {
        return None;
    }
    let t = (ws.center - o).dot(ws.normal) / denom;
    if t <= 0.0 || t > max_range {
        return None;
    }
    let d = o + e * t - ws.center;
    let u = d.dot(ws.q_u) * ws.inv_su;
    let v = d.dot(ws.q_v) * ws.inv_sv;
    if u * u + v * v > MAX_RADIUS_SQ {
        return None;
    }
    let g = gaussian_value(u, v);
    let a = ws.alpha * g;
    if a < ALPHA_CUTOFF {
        return None;
    }
    Some(RayHit { t, u, v, g, a, denom, d })
}

#[inline]
fn lex_less(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Insert a candidate into the sorted bounded buffer, rejecting duplicates
/// (the two proxy triangles of one splat yield identical candidates) and
/// evicting the lexicographic maximum when full.
fn offer(buf: &mut Vec<(f64, u32)>, k: usize, cand: (f64, u32)) {
    if buf.iter().any(|&h| h == cand) {
        return;
    }
    if buf.len() == k {
        if !lex_less(cand, *buf.last().unwrap()) {
            return;
        }
        buf.pop();
    }
    let pos = buf.partition_point(|&h| lex_less(h, cand));
    buf.insert(pos, cand);
}

/// Collect the k nearest gated hits strictly after `resume` in (t, id)
/// order. Nodes are pruned against the buffer's current worst entry.
#[allow(clippy::too_many_arguments)]
fn collect_round(
    bvh: &Bvh,
    splats: &[WorldSplat],
    o: DVec3,
    e: DVec3,
    inv_dir: DVec3,
    max_range: f64,
    resume: Option<(f64, u32)>,
    k: usize,
    buf: &mut Vec<(f64, u32)>,
    stack: &mut Vec<u32>,
) {
    buf.clear();
    if bvh.nodes.is_empty() {
        return;
    }
    stack.clear();
    stack.push(0);
    while let Some(ni) = stack.pop() {
        let node = &bvh.nodes[ni as usize];
        let bound = if buf.len() == k {
            buf.last().unwrap().0
        } else {
            max_range
        };
        if node.aabb.ray_entry(o, inv_dir, bound).is_none() {
            continue;
        }
        if node.leaf {
            for i in node.a..node.a + node.b {
                let id = bvh.tris[i as usize] >> 1;
                let ws = &splats[id as usize];
                if let Some(rh) = gate_ray_hit(ws, o, e, max_range) {
                    let cand = (rh.t, id);
                    if let Some(res) = resume {
                        if !lex_less(res, cand) {
                            continue;
                        }
                    }
                    offer(buf, k, cand);
                }
            }
        } else {
            // near child last → popped first
            let le = bvh.nodes[node.a as usize].aabb.ray_entry(o, inv_dir, bound);
            let re = bvh.nodes[node.b as usize].aabb.ray_entry(o, inv_dir, bound);
            match (le, re) {
                (Some(lt), Some(rt)) => {
                    if lt <= rt {
                        stack.push(node.b);
                        stack.push(node.a);
                    } else {
                        stack.push(node.a);
                        stack.push(node.b);
                    }
                }
                (Some(_), None) => stack.push(node.a),
                (None, Some(_)) => stack.push(node.b),
                (None, None) => {}
            }
        }
    }
}

#[inline]
fn dot_basis(coeffs: &[f64; SH_COEFFS], basis: &[f64; SH_COEFFS], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        s += coeffs[i] * basis[i];
    }
    s
}

struct RayOut {
    range: f64,
    intensity: f64,
    raydrop: f64,
    alpha: f64,
    used: u32,
}

/// Stream one ray through k-buffer rounds. The arithmetic per hit matches
/// `composite_forward` exactly, so the result is bitwise equal to sorting
/// all hits globally and compositing once.
#[allow(clippy::too_many_arguments)]
fn trace_ray(
    bvh: &Bvh,
    splats: &[WorldSplat],
    flat: &FlatScene,
    o: DVec3,
    e: DVec3,
    max_range: f64,
    k: usize,
    basis_int: &[f64; SH_COEFFS],
    basis_drop: &[f64; SH_COEFFS],
    buf: &mut Vec<(f64, u32)>,
    stack: &mut Vec<u32>,
) -> RayOut {
    let n_int = sh_coeff_count(flat.sh.intensity);
    let n_drop = sh_coeff_count(flat.sh.raydrop);
    let inv_dir = DVec3::new(1.0 / e.x, 1.0 / e.y, 1.0 / e.z);
    let mut resume: Option<(f64, u32)> = None;
    let mut acc = [0.0f64; CH];
    let mut trans = 1.0f64;
    let mut used = 0u32;
    'rounds: loop {
        collect_round(bvh, splats, o, e, inv_dir, max_range, resume, k, buf, stack);
        if buf.is_empty() {
            break;
        }
        let exhausted = buf.len() < k;
        for bi in 0..buf.len() {
            let (t, id) = buf[bi];
            let ws = &splats[id as usize];
            let rh = gate_ray_hit(ws, o, e, max_range).expect("buffered hit re-gates");
            let g = &flat.splats[id as usize];
            let ival = sigmoid(dot_basis(&g.sh_intensity, basis_int, n_int));
            let rval = sigmoid(dot_basis(&g.sh_raydrop, basis_drop, n_drop));
            let a = rh.a.min(ALPHA_MAX);
            let w = a * trans;
            acc[0] += t * w;
            acc[1] += ival * w;
            acc[2] += rval * w;
            trans *= 1.0 - a;
            used += 1;
            resume = Some((t, id));
            if trans < TRANSMITTANCE_MIN {
                break 'rounds;
            }
        }
        if exhausted {
            break;
        }
    }
    RayOut {
        range: acc[0],
        intensity: acc[1],
        raydrop: acc[2],
        alpha: 1.0 - trans,
        used,
    }
}

fn write_ray(img: &mut RangeImage, i: usize, out: RayOut) {
    img.range[i] = out.range;
    img.intensity[i] = out.intensity;
    img.raydrop[i] = out.raydrop;
    img.alpha[i] = out.alpha;
    img.n_contrib[i] = out.used;
}

/// BVH + k-buffer forward trace. Output is independent of `k`.
pub fn trace(flat: &FlatScene, lidar: &LidarModel, k: usize) -> Result<RangeImage> {
    if k == 0 {
        return Err(Error::Contract("k-buffer size must be at least 1".into()));
    }
    lidar.validate()?;
    let bvh = Bvh::build(flat);
    let splats = world_splats(flat);
    let (rows, cols) = (lidar.rows(), lidar.cols);
    let mut img = RangeImage::new(rows, cols);
    let row_outs: Vec<Vec<RayOut>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut buf = Vec::with_capacity(k);
            let mut stack = Vec::with_capacity(64);
            (0..cols)
                .map(|c| {
                    let ray = lidar.ray(r, c);
                    let (bi, bd) = ray_bases(flat, ray.dir);
                    trace_ray(
                        &bvh, &splats, flat, ray.origin, ray.dir, lidar.max_range, k,
                        &bi, &bd, &mut buf, &mut stack,
                    )
                })
                .collect()
        })
        .collect();
    for (r, outs) in row_outs.into_iter().enumerate() {
        for (c, out) in outs.into_iter().enumerate() {
            write_ray(&mut img, r * cols + c, out);
        }
    }
    Ok(img)
}

fn ray_bases(flat: &FlatScene, dir: DVec3) -> ([f64; SH_COEFFS], [f64; SH_COEFFS]) {
    (
        sh_basis(flat.sh.intensity, dir),
        sh_basis(flat.sh.raydrop, dir),
    )
}

/// Brute-force reference: every splat tested against every ray, hits sorted
/// globally by (t, id), composited once.
pub fn trace_oracle(flat: &FlatScene, lidar: &LidarModel) -> Result<RangeImage> {
    lidar.validate()?;
    let splats = world_splats(flat);
    let (rows, cols) = (lidar.rows(), lidar.cols);
    let mut img = RangeImage::new(rows, cols);
    let row_outs: Vec<Vec<RayOut>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let ray = lidar.ray(r, c);
                    let (basis_int, basis_drop) = ray_bases(flat, ray.dir);
                    let n_int = sh_coeff_count(flat.sh.intensity);
                    let n_drop = sh_coeff_count(flat.sh.raydrop);
                    let mut order: Vec<(f64, u32)> = Vec::new();
                    for (id, ws) in splats.iter().enumerate() {
                        if let Some(rh) =
                            gate_ray_hit(ws, ray.origin, ray.dir, lidar.max_range)
                        {
                            order.push((rh.t, id as u32));
                        }
                    }
                    order.sort_unstable_by(|l, r| {
                        l.0.partial_cmp(&r.0).unwrap().then(l.1.cmp(&r.1))
                    });
                    let hits: Vec<Hit<CH>> = order
                        .iter()
                        .map(|&(t, id)| {
                            let ws = &splats[id as usize];
                            let rh = gate_ray_hit(ws, ray.origin, ray.dir, lidar.max_range)
                                .unwrap();
                            let g = &flat.splats[id as usize];
                            let ival =
                                sigmoid(dot_basis(&g.sh_intensity, &basis_int, n_int));
                            let rval =
                                sigmoid(dot_basis(&g.sh_raydrop, &basis_drop, n_drop));
                            Hit { a: rh.a, value: [t, ival, rval] }
                        })
                        .collect();
                    let res = composite_forward(&hits);
                    RayOut {
                        range: res.value[0],
                        intensity: res.value[1],
                        raydrop: res.value[2],
                        alpha: res.alpha,
                        used: res.used as u32,
                    }
                })
                .collect()
        })
        .collect();
    for (r, outs) in row_outs.into_iter().enumerate() {
        for (c, out) in outs.into_iter().enumerate() {
            write_ray(&mut img, r * cols + c, out);
        }
    }
    Ok(img)
}

/// Upstream gradients on the range-image channels, all `rows × cols`.
pub struct LidarUpstream<'a> {
    pub d_range: &'a [f64],
    pub d_intensity: &'a [f64],
    pub d_raydrop: &'a [f64],
    pub d_alpha: &'a [f64],
}

pub struct LidarGrads {
    pub grads: Vec<SplatGrad>,
    pub seen: Vec<bool>,
}

/// Collect every gated hit along a ray (full traversal, no k-bound),
/// deduplicated and sorted by (t, id).
fn collect_all_hits(
    bvh: &Bvh,
    splats: &[WorldSplat],
    o: DVec3,
    e: DVec3,
    max_range: f64,
    stack: &mut Vec<u32>,
    out: &mut Vec<(f64, u32)>,
) {
    out.clear();
    if bvh.nodes.is_empty() {
        return;
    }
    let inv_dir = DVec3::new(1.0 / e.x, 1.0 / e.y, 1.0 / e.z);
    stack.clear();
    stack.push(0);
    while let Some(ni) = stack.pop() {
        let node = &bvh.nodes[ni as usize];
        if node.aabb.ray_entry(o, inv_dir, max_range).is_none() {
            continue;
        }
        if node.leaf {
            for i in node.a..node.a + node.b {
                let id = bvh.tris[i as usize] >> 1;
                if let Some(rh) = gate_ray_hit(&splats[id as usize], o, e, max_range) {
                    out.push((rh.t, id));
                }
            }
        } else {
            stack.push(node.a);
            stack.push(node.b);
        }
    }
    out.sort_unstable_by(|l, r| l.0.partial_cmp(&r.0).unwrap().then(l.1.cmp(&r.1)));
    out.dedup();
}

/// Analytic backward pass. Rays are processed in fixed chunks whose sparse
/// partials are reduced in chunk order, independent of thread count.
pub fn trace_backward(
    flat: &FlatScene,
    lidar: &LidarModel,
    up: &LidarUpstream,
) -> Result<LidarGrads> {
    lidar.validate()?;
    let n_rays = lidar.rows() * lidar.cols;
    if up.d_range.len() != n_rays
        || up.d_intensity.len() != n_rays
        || up.d_raydrop.len() != n_rays
        || up.d_alpha.len() != n_rays
    {
        return Err(Error::ShapeMismatch(
            "upstream gradient buffers must match the range image size".into(),
        ));
    }
    let bvh = Bvh::build(flat);
    let splats = world_splats(flat);
    let n_int = sh_coeff_count(flat.sh.intensity);
    let n_drop = sh_coeff_count(flat.sh.raydrop);
    let cols = lidar.cols;
    let chunk_len = n_rays.div_ceil(BACKWARD_CHUNKS.max(1)).max(1);
    let bounds: Vec<(usize, usize)> = (0..n_rays)
        .step_by(chunk_len)
        .map(|s| (s, (s + chunk_len).min(n_rays)))
        .collect();
    let partials: Vec<BTreeMap<u32, SplatGrad>> = bounds
        .par_iter()
        .map(|&(start, end)| {
            let mut map: BTreeMap<u32, SplatGrad> = BTreeMap::new();
            let mut stack = Vec::with_capacity(64);
            let mut order: Vec<(f64, u32)> = Vec::new();
            let mut hits: Vec<Hit<CH>> = Vec::new();
            let mut hit_grads = Vec::new();
            for i in start..end {
                let ray = lidar.ray(i / cols, i % cols);
                let (o, e) = (ray.origin, ray.dir);
                collect_all_hits(&bvh, &splats, o, e, lidar.max_range, &mut stack, &mut order);
                if order.is_empty() {
                    continue;
                }
                let (basis_int, basis_drop) = ray_bases(flat, e);
                hits.clear();
                for &(t, id) in &order {
                    let g = &flat.splats[id as usize];
                    let rh = gate_ray_hit(&splats[id as usize], o, e, lidar.max_range)
                        .expect("collected hit re-gates");
                    let ival = sigmoid(dot_basis(&g.sh_intensity, &basis_int, n_int));
                    let rval = sigmoid(dot_basis(&g.sh_raydrop, &basis_drop, n_drop));
                    hits.push(Hit { a: rh.a, value: [t, ival, rval] });
                }
                let upstream = [up.d_range[i], up.d_intensity[i], up.d_raydrop[i]];
                composite_backward(&hits, &upstream, up.d_alpha[i], &mut hit_grads);
                for (j, hg) in hit_grads.iter().enumerate() {
                    let (_, id) = order[j];
                    let ws = &splats[id as usize];
                    let rh = gate_ray_hit(ws, o, e, lidar.max_range).unwrap();
                    let grad = map.entry(id).or_insert_with(SplatGrad::zero);
                    // channel values: t, sigmoid(SH), sigmoid(SH)
                    let ival = hits[j].value[1];
                    let rval = hits[j].value[2];
                    let ds_int = hg.value[1] * ival * (1.0 - ival);
                    for ci in 0..n_int {
                        grad.sh_intensity[ci] += ds_int * basis_int[ci];
                    }
                    let ds_drop = hg.value[2] * rval * (1.0 - rval);
                    for ci in 0..n_drop {
                        grad.sh_raydrop[ci] += ds_drop * basis_drop[ci];
                    }
                    // kernel and geometry chains
                    let da = hg.a;
                    let d_alpha_act = da * rh.g;
                    let dg = da * ws.alpha;
                    let du = -dg * rh.g * rh.u;
                    let dv = -dg * rh.g * rh.v;
                    let dt = hg.value[0]
                        + du * e.dot(ws.q_u) * ws.inv_su
                        + dv * e.dot(ws.q_v) * ws.inv_sv;
                    let mut dp =
                        ws.q_u * (-du * ws.inv_su) + ws.q_v * (-dv * ws.inv_sv);
                    dp += ws.normal * (dt / rh.denom);
                    let dn = rh.d * (-dt / rh.denom);
                    let dqu = rh.d * (du * ws.inv_su) + ws.q_v.cross(dn);
                    let dqv = rh.d * (dv * ws.inv_sv) + dn.cross(ws.q_u);
                    grad.center += dp;
                    grad.tangent_u += dqu;
                    grad.tangent_v += dqv;
                    grad.log_scale_u += -du * rh.u;
                    grad.log_scale_v += -dv * rh.v;
                    grad.opacity_logit += d_alpha_act * ws.alpha * (1.0 - ws.alpha);
                }
            }
            map
        })
        .collect();
    let mut grads = vec![SplatGrad::zero(); flat.len()];
    let mut seen = vec![false; flat.len()];
    for map in &partials {
        for (&id, part) in map {
            grads[id as usize].add_assign(part);
            seen[id as usize] = true;
        }
    }
    Ok(LidarGrads { grads, seen })
}

/// Back-project valid returns (sufficient alpha, drop probability < ½) to
/// world points carrying their blended intensity.
pub fn extract_point_cloud(img: &RangeImage, lidar: &LidarModel) -> (Vec<DVec3>, Vec<f64>) {
    let mut points = Vec::new();
    let mut intensity = Vec::new();
    for r in 0..img.rows {
        for c in 0..img.cols {
            let i = r * img.cols + c;
            if !img.ray_valid(i) {
                continue;
            }
            let ray = lidar.ray(r, c);
            points.push(ray.origin + ray.dir * img.range[i]);
            intensity.push(img.intensity[i]);
        }
    }
    (points, intensity)
}
