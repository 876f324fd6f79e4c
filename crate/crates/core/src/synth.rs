//! Synthetic scene recipes with exact ground truth. Each recipe builds a
//! scene graph and a set of sensor rigs; ground-truth observations are then
//! rendered by the same forward models the optimizer differentiates, so a
//! fit against them can in principle reach zero error.
//!
//! Recipes (all deterministic per seed):
//! - `textured-plane`: a static wall with sinusoidal color and intensity,
//!   ring of cameras plus lidar sweeps facing it. The fit benchmark.
//! - `box-room`: floor and four walls seen by a lidar from an off-center
//!   pose inside; oblique incidence on the far walls.
//! - `moving-box`: a rigid cube sliding along a linear trajectory over a
//!   static floor, observed at several timestamps.
//! - `walker`: a deformable plate above a floor whose surfels swing with
//!   scripted per-keyframe offsets and twists while the node advances.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use glam::{DMat3, DQuat, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io;
use crate::lidar::{trace, RangeImage};
use crate::math::Rigid;
use crate::model::{Gaussian2D, ShDegrees};
use crate::optim::{CameraFrame, LidarFrame, TrainBatch};
use crate::raster::{rasterize, FrameBuffer};
use crate::scene::{DeformFrame, NodeKind, SceneGraph, SceneNode};
use crate::sensor::{CameraModel, LidarModel};

pub const RECIPES: [&str; 4] = ["textured-plane", "box-room", "moving-box", "walker"];

/// Sensor grid sizes; recipes derive intrinsics and elevation spans from
/// their geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub cam_width: usize,
    pub cam_height: usize,
    pub lidar_rows: usize,
    pub lidar_cols: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { cam_width: 480, cam_height: 320, lidar_rows: 32, lidar_cols: 512 }
    }
}

/// The sensors observing the scene at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub timestamp: f64,
    pub cameras: Vec<CameraModel>,
    pub lidar: Option<LidarModel>,
}

/// A recipe's output: ground-truth scene plus training and held-out rigs.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub scene: SceneGraph,
    pub train: Vec<Rig>,
    pub heldout: Vec<Rig>,
}

/// World-to-camera pose for a camera at `eye` looking at `target`
/// (x right, y down, z forward).
pub fn look_at(eye: DVec3, target: DVec3, up: DVec3) -> Rigid {
    let f = (target - eye).normalize();
    let r = up.cross(f).normalize();
    let d = f.cross(r);
    let rot = DMat3::from_cols(r, d, f).transpose();
    let q = DQuat::from_mat3(&rot).normalize();
    Rigid { rotation: q, translation: -(q * eye) }
}

/// Sensor-to-world pose rotating the lidar's forward axis (+x) to `yaw`
/// radians around +z.
fn lidar_pose(origin: DVec3, yaw: f64) -> Rigid {
    Rigid { rotation: DQuat::from_rotation_z(yaw), translation: origin }
}

pub fn build(recipe: &str, seed: u64, params: &SynthParams) -> Result<SynthDataset> {
    let dataset = match recipe {
        "textured-plane" => textured_plane(seed, params),
        "box-room" => box_room(seed, params),
        "moving-box" => moving_box(seed, params),
        "walker" => walker(seed, params),
        other => return Err(Error::UnknownRecipe(other.to_string())),
    };
    dataset.scene.validate()?;
    Ok(dataset)
}

// -------------------------------------------------------------------------
// scene construction helpers

/// A surfel grid covering the parallelogram `origin + u·du + v·dv` for
/// u, v ∈ [0, 1], `nu` × `nv` sites, painted per normalized coordinate.
fn grid_patch(
    origin: DVec3,
    du: DVec3,
    dv: DVec3,
    nu: usize,
    nv: usize,
    opacity: f64,
    paint: impl Fn(f64, f64) -> (DVec3, f64, f64),
) -> Vec<Gaussian2D> {
    let tu = du.normalize();
    let tv = dv.normalize();
    // Overlapping footprints: neighbors at one grid step sit well inside
    // each other's 3σ radius, so alpha saturates between sites.
    let scale_u = 0.65 * du.length() / (nu.max(2) - 1) as f64;
    let scale_v = 0.65 * dv.length() / (nv.max(2) - 1) as f64;
    let mut out = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = i as f64 / (nu - 1) as f64;
        for j in 0..nv {
            let v = j as f64 / (nv - 1) as f64;
            let center = origin + du * u + dv * v;
            let mut g = Gaussian2D::from_activated(center, tu, tv, scale_u, scale_v, opacity);
            let (color, intensity, raydrop) = paint(u, v);
            g.set_base_color(color);
            g.set_base_intensity(intensity);
            g.set_base_raydrop(raydrop);
            out.push(g);
        }
    }
    out
}

fn camera(params: &SynthParams, pose: Rigid) -> CameraModel {
    let w = params.cam_width;
    let h = params.cam_height;
    CameraModel {
        fx: w as f64,
        fy: w as f64,
        cx: w as f64 / 2.0,
        cy: h as f64 / 2.0,
        width: w,
        height: h,
        pose,
    }
}

fn sinusoid(a: f64, freq: f64, phase: f64, t: f64) -> f64 {
    0.5 + a * (freq * t + phase).sin()
}

// -------------------------------------------------------------------------
// recipes

/// Static wall at y = 1.5 (x ∈ [-1.3, 1.3], z ∈ [-0.1, 2.1]) with smooth
/// sinusoidal texture; six training views and two held-out ones face it
/// from around the origin, each paired with a lidar sweep.
fn textured_plane(seed: u64, params: &SynthParams) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = grid_patch(
        DVec3::new(-1.3, 1.5, -0.1),
        DVec3::new(2.6, 0.0, 0.0),
        DVec3::new(0.0, 0.0, 2.2),
        40,
        40,
        0.95,
        |u, v| {
            let x = -1.3 + 2.6 * u;
            let z = -0.1 + 2.2 * v;
            let color = DVec3::new(
                sinusoid(0.30, 3.1, 1.7 * z, x),
                sinusoid(0.30, 2.3, -2.9 * z + 1.0, x),
                sinusoid(0.25, 4.3, 0.6 + 1.3 * z, x),
            );
            (color, sinusoid(0.25, 2.0, -1.3 * z, x), 0.02)
        },
    );
    let scene = SceneGraph::background_only(background, ShDegrees::default());

    let lidar_for = |rng: &mut ChaCha8Rng| {
        let origin = DVec3::new(
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.10..0.10),
            rng.gen_range(0.9..1.1),
        );
        LidarModel::uniform(
            params.lidar_rows,
            params.lidar_cols,
            -0.5,
            0.5,
            10.0,
            lidar_pose(origin, PI / 2.0),
        )
    };
    let rig = |idx: usize, t: f64, rng: &mut ChaCha8Rng| {
        let angle = TAU * idx as f64 / 6.0;
        let eye = DVec3::new(
            0.25 * angle.cos() + rng.gen_range(-0.05..0.05),
            -0.2 + 0.1 * angle.sin(),
            1.0 + 0.20 * angle.sin(),
        );
        let target = DVec3::new(0.1 * angle.sin(), 1.5, 1.0);
        Rig {
            timestamp: t,
            cameras: vec![camera(params, look_at(eye, target, DVec3::Z))],
            lidar: Some(lidar_for(rng)),
        }
    };

    let train = (0..6).map(|i| rig(i, i as f64, &mut rng)).collect();
    let heldout = (0..2).map(|i| rig(i * 3 + 1, 100.0 + i as f64, &mut rng)).collect();
    SynthDataset { scene, train, heldout }
}

/// Floor and four walls of a 4 × 4 × 2.5 m room; the lidar scans from an
/// off-center pose so the far walls are hit at oblique incidence. Two
/// cameras look across the room.
fn box_room(seed: u64, params: &SynthParams) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x626f_785f);
    let mut background = Vec::new();
    let half = 2.0;
    let height = 2.5;
    let paint_wall = move |tint: DVec3, fu: f64, fv: f64| {
        move |u: f64, v: f64| {
            let c = tint * (0.75 + 0.25 * (fu * u * TAU).sin() * (fv * v * TAU).cos());
            (c, 0.3 + 0.3 * ((fu * u + fv * v) * PI).sin().abs(), 0.03)
        }
    };
    // floor
    background.extend(grid_patch(
        DVec3::new(-half, -half, 0.0),
        DVec3::new(2.0 * half, 0.0, 0.0),
        DVec3::new(0.0, 2.0 * half, 0.0),
        27,
        27,
        0.95,
        paint_wall(DVec3::new(0.55, 0.5, 0.45), 3.0, 3.0),
    ));
    let wall_specs = [
        // +x and -x walls sweep along y, ±y walls along x.
        (DVec3::new(half, -half, 0.0), DVec3::new(0.0, 2.0 * half, 0.0), DVec3::new(0.8, 0.45, 0.4)),
        (DVec3::new(-half, -half, 0.0), DVec3::new(0.0, 2.0 * half, 0.0), DVec3::new(0.4, 0.75, 0.45)),
        (DVec3::new(-half, half, 0.0), DVec3::new(2.0 * half, 0.0, 0.0), DVec3::new(0.45, 0.5, 0.8)),
        (DVec3::new(-half, -half, 0.0), DVec3::new(2.0 * half, 0.0, 0.0), DVec3::new(0.75, 0.7, 0.4)),
    ];
    for (origin, du, tint) in wall_specs {
        background.extend(grid_patch(
            origin,
            du,
            DVec3::new(0.0, 0.0, height),
            27,
            17,
            0.95,
            paint_wall(tint, 2.0, 1.5),
        ));
    }
    let scene = SceneGraph::background_only(background, ShDegrees::default());

    let lidar_origin = DVec3::new(
        0.6 + rng.gen_range(-0.05..0.05),
        -0.4 + rng.gen_range(-0.05..0.05),
        1.2,
    );
    let make_rig = |t: f64, yaw: f64, eye: DVec3| Rig {
        timestamp: t,
        cameras: vec![camera(params, look_at(eye, DVec3::new(0.0, 0.0, 1.0), DVec3::Z))],
        lidar: Some(LidarModel::uniform(
            params.lidar_rows,
            params.lidar_cols,
            -0.45,
            0.25,
            12.0,
            lidar_pose(lidar_origin, yaw),
        )),
    };
    let train = vec![
        make_rig(0.0, 0.0, DVec3::new(1.4, -1.4, 1.4)),
        make_rig(1.0, 0.4, DVec3::new(-1.4, -1.2, 1.6)),
    ];
    let heldout = vec![make_rig(100.0, 0.2, DVec3::new(1.2, 1.3, 1.5))];
    SynthDataset { scene, train, heldout }
}

/// A 0.4 m cube (rigid node) slides linearly along x over a static floor
/// between keyframes t = 0 and t = 1. Training rigs sample six timestamps;
/// the held-out ones fall between them.
fn moving_box(seed: u64, params: &SynthParams) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_7662);
    let floor = grid_patch(
        DVec3::new(-2.0, -0.4, -0.4),
        DVec3::new(4.0, 0.0, 0.0),
        DVec3::new(0.0, 4.0, 0.0),
        21,
        21,
        0.95,
        |u, v| {
            (
                DVec3::new(0.45, 0.5, 0.55) * (0.8 + 0.2 * (5.0 * u * TAU).sin() * (5.0 * v * TAU).sin()),
                0.35,
                0.03,
            )
        },
    );

    // Canonical cube centered at the origin, side 0.4: six 7×7 faces.
    let s = 0.2;
    let n = 7;
    let face = |origin: DVec3, du: DVec3, dv: DVec3, tint: DVec3| {
        grid_patch(origin, du, dv, n, n, 0.95, move |u, v| {
            let c = tint * (0.7 + 0.3 * (3.0 * u * TAU).cos() * (2.0 * v * TAU).sin());
            (c, 0.55 + 0.15 * ((u + v) * TAU).sin(), 0.02)
        })
    };
    let d = 2.0 * s;
    let mut cube = Vec::new();
    cube.extend(face(DVec3::new(-s, -s, s), DVec3::new(d, 0.0, 0.0), DVec3::new(0.0, d, 0.0), DVec3::new(0.85, 0.3, 0.3))); // top
    cube.extend(face(DVec3::new(-s, -s, -s), DVec3::new(d, 0.0, 0.0), DVec3::new(0.0, d, 0.0), DVec3::new(0.4, 0.4, 0.4))); // bottom
    cube.extend(face(DVec3::new(-s, -s, -s), DVec3::new(d, 0.0, 0.0), DVec3::new(0.0, 0.0, d), DVec3::new(0.3, 0.75, 0.35))); // -y
    cube.extend(face(DVec3::new(-s, s, -s), DVec3::new(d, 0.0, 0.0), DVec3::new(0.0, 0.0, d), DVec3::new(0.3, 0.45, 0.8))); // +y
    cube.extend(face(DVec3::new(-s, -s, -s), DVec3::new(0.0, d, 0.0), DVec3::new(0.0, 0.0, d), DVec3::new(0.8, 0.7, 0.3))); // -x
    cube.extend(face(DVec3::new(s, -s, -s), DVec3::new(0.0, d, 0.0), DVec3::new(0.0, 0.0, d), DVec3::new(0.7, 0.35, 0.7))); // +x

    let y_path = 1.6;
    let z_path = 0.0;
    let node = SceneNode {
        kind: NodeKind::Rigid,
        primitives: cube,
        poses: vec![
            Rigid { rotation: DQuat::IDENTITY, translation: DVec3::new(-0.6, y_path, z_path) },
            Rigid { rotation: DQuat::IDENTITY, translation: DVec3::new(0.6, y_path, z_path) },
        ],
        deform: Vec::new(),
    };
    let scene = SceneGraph {
        background: floor,
        nodes: vec![node],
        keyframes: vec![0.0, 1.0],
        sh: ShDegrees::default(),
    };

    let cam_eye = DVec3::new(rng.gen_range(-0.1..0.1), -0.6, 0.7);
    let lidar_origin = DVec3::new(0.15, -0.5, 0.5);
    let make_rig = |t: f64| Rig {
        timestamp: t,
        cameras: vec![camera(
            params,
            look_at(cam_eye, DVec3::new(0.0, y_path, 0.0), DVec3::Z),
        )],
        lidar: Some(LidarModel::uniform(
            params.lidar_rows,
            params.lidar_cols,
            -0.45,
            0.15,
            8.0,
            lidar_pose(lidar_origin, PI / 2.0),
        )),
    };
    let train = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0].iter().map(|&t| make_rig(t)).collect();
    let heldout = vec![make_rig(0.35), make_rig(0.65)];
    SynthDataset { scene, train, heldout }
}

/// A deformable vertical plate advances along x while its surfels swing
/// with height-weighted sinusoidal offsets and mild twists, scripted at
/// five keyframes.
fn walker(seed: u64, params: &SynthParams) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77_616c);
    let floor = grid_patch(
        DVec3::new(-2.0, -0.2, 0.0),
        DVec3::new(4.0, 0.0, 0.0),
        DVec3::new(0.0, 3.4, 0.0),
        21,
        18,
        0.95,
        |u, v| (DVec3::new(0.5, 0.48, 0.45) * (0.85 + 0.15 * (4.0 * (u + v) * PI).sin()), 0.3, 0.03),
    );

    // Canonical plate: x ∈ [-0.25, 0.25], z ∈ [0.45, 1.75] at y = 0.
    let (nu, nv) = (9, 15);
    let plate = grid_patch(
        DVec3::new(-0.25, 0.0, 0.45),
        DVec3::new(0.5, 0.0, 0.0),
        DVec3::new(0.0, 0.0, 1.3),
        nu,
        nv,
        0.95,
        |u, v| {
            (
                DVec3::new(
                    sinusoid(0.25, 5.0, 0.0, u + v),
                    sinusoid(0.25, 3.0, 1.2, u - v),
                    0.55,
                ),
                0.45 + 0.2 * (v * TAU).sin(),
                0.02,
            )
        },
    );

    let keyframes: Vec<f64> = (0..5).map(|k| k as f64 * 0.25).collect();
    let phase: Vec<f64> = plate
        .iter()
        .map(|g| 3.0 * g.center.z + 0.5 * g.center.x)
        .collect();
    // Swing grows away from the plate's mid height, like limbs around a hip.
    let weight: Vec<f64> = plate.iter().map(|g| (g.center.z - 1.1).abs() / 0.65).collect();
    let deform = keyframes
        .iter()
        .map(|&t| DeformFrame {
            offsets: (0..plate.len())
                .map(|i| DVec3::new(0.12 * weight[i] * (TAU * t + phase[i]).sin(), 0.0, 0.0))
                .collect(),
            rotations: (0..plate.len())
                .map(|i| DQuat::from_rotation_z(0.15 * (TAU * t + phase[i]).cos()))
                .collect(),
        })
        .collect();
    let poses = keyframes
        .iter()
        .map(|&t| Rigid {
            rotation: DQuat::IDENTITY,
            translation: DVec3::new(0.4 * t - 0.2, 1.5, 0.0),
        })
        .collect();
    let node = SceneNode { kind: NodeKind::Deformable, primitives: plate, poses, deform };
    let scene = SceneGraph {
        background: floor,
        nodes: vec![node],
        keyframes,
        sh: ShDegrees::default(),
    };

    let cam_eye = DVec3::new(rng.gen_range(-0.1..0.1) + 0.3, -0.7, 1.1);
    let make_rig = |t: f64| Rig {
        timestamp: t,
        cameras: vec![camera(
            params,
            look_at(cam_eye, DVec3::new(0.0, 1.5, 1.1), DVec3::Z),
        )],
        lidar: Some(LidarModel::uniform(
            params.lidar_rows,
            params.lidar_cols,
            -0.4,
            0.35,
            8.0,
            lidar_pose(DVec3::new(-0.2, -0.6, 0.9), PI / 2.0),
        )),
    };
    let train = (0..5).map(|k| make_rig(k as f64 * 0.25)).collect();
    let heldout = vec![make_rig(0.375), make_rig(0.625)];
    SynthDataset { scene, train, heldout }
}

// -------------------------------------------------------------------------
// ground-truth rendering and perturbed initialization

/// Render one rig into a training batch plus the raw buffers (camera
/// framebuffers and the lidar sweep) for callers that persist depth.
pub fn render_rig(
    scene: &SceneGraph,
    rig: &Rig,
    k: usize,
) -> Result<(TrainBatch, Vec<FrameBuffer>, Option<RangeImage>)> {
    let flat = scene.flatten(rig.timestamp)?;
    let mut cameras = Vec::with_capacity(rig.cameras.len());
    let mut fbs = Vec::with_capacity(rig.cameras.len());
    for cam in &rig.cameras {
        let fb = rasterize(&flat, cam)?;
        cameras.push(CameraFrame { cam: cam.clone(), image: fb.color.clone() });
        fbs.push(fb);
    }
    let mut lidar = None;
    let mut sweep = None;
    if let Some(model) = &rig.lidar {
        let img = trace(&flat, model, k)?;
        let valid = (0..img.range.len()).map(|i| img.ray_valid(i)).collect();
        lidar = Some(LidarFrame {
            lidar: model.clone(),
            range: img.range.clone(),
            intensity: img.intensity.clone(),
            valid,
        });
        sweep = Some(img);
    }
    let batch = TrainBatch { timestamp: rig.timestamp, cameras, lidar };
    Ok((batch, fbs, sweep))
}

/// Render every rig of a dataset split.
pub fn render_batches(scene: &SceneGraph, rigs: &[Rig], k: usize) -> Result<Vec<TrainBatch>> {
    rigs.iter()
        .map(|rig| render_rig(scene, rig, k).map(|(b, _, _)| b))
        .collect()
}

/// Starting point for a fit: the ground-truth scene with every primitive
/// center displaced by isotropic Gaussian noise (std `sigma`); all other
/// parameters are kept, so the optimizer has to recover geometry.
pub fn jittered_init(scene: &SceneGraph, sigma: f64, seed: u64) -> SceneGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    let mut perturb = |prims: &mut Vec<Gaussian2D>| {
        for g in prims.iter_mut() {
            g.center += sigma * DVec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
        }
    };
    perturb(&mut out.background);
    for node in &mut out.nodes {
        perturb(&mut node.primitives);
    }
    out
}

/// Standard normal via Box-Muller, uniform draws clamped away from zero.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

// -------------------------------------------------------------------------
// dataset emission

/// Render a dataset and write it under `dir`:
///
/// ```text
/// dir/
///   scene.scn                        ground-truth scene
///   train/manifest.json
///   train/frames/f000_c0.png         camera image
///   train/frames/f000_c0_depth.fpl   camera depth + alpha planes
///   train/frames/f000_scan.fpl       lidar DIRA planes
///   heldout/...                      same layout
/// ```
///
/// The directory is locked while writing.
pub fn emit_dataset(dir: &Path, dataset: &SynthDataset, k: usize) -> Result<()> {
    let _lock = io::DirLock::acquire(dir)?;
    io::write_scene_file(&dir.join("scene.scn"), &dataset.scene)?;
    emit_split(&dir.join("train"), &dataset.scene, &dataset.train, k)?;
    emit_split(&dir.join("heldout"), &dataset.scene, &dataset.heldout, k)?;
    Ok(())
}

fn emit_split(dir: &Path, scene: &SceneGraph, rigs: &[Rig], k: usize) -> Result<()> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir)?;
    let mut frames = Vec::with_capacity(rigs.len());
    for (fi, rig) in rigs.iter().enumerate() {
        let (_, fbs, sweep) = render_rig(scene, rig, k)?;
        let mut cameras = Vec::with_capacity(rig.cameras.len());
        for (ci, (cam, fb)) in rig.cameras.iter().zip(&fbs).enumerate() {
            let image = format!("frames/f{fi:03}_c{ci}.png");
            let depth = format!("frames/f{fi:03}_c{ci}_depth.fpl");
            io::save_rgb(&dir.join(&image), fb.width, fb.height, &fb.color)?;
            io::planes::write_camera_depth(&dir.join(&depth), fb)?;
            cameras.push(io::CameraEntry { camera: cam.clone(), image, depth: Some(depth) });
        }
        let mut lidars = Vec::new();
        if let (Some(model), Some(img)) = (&rig.lidar, &sweep) {
            let scan = format!("frames/f{fi:03}_scan.fpl");
            io::planes::write_range_image(&dir.join(&scan), img)?;
            lidars.push(io::LidarEntry { lidar: model.clone(), scan });
        }
        frames.push(io::FrameEntry { timestamp: rig.timestamp, cameras, lidars });
    }
    io::save_manifest(&dir.join("manifest.json"), &io::DatasetManifest { frames })
}
