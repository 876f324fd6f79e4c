//! Versioned binary scene container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     8 bytes   "SPLATSCN"
//! version   u32       currently 1
//! sh        3 × u32   color / intensity / ray-drop SH degrees
//! counts    3 × u32   background primitives B, nodes N, keyframes K
//! keyframes K × f64
//! background B × primitive record
//! N nodes, each:
//!   kind    u8        0 rigid, 1 deformable
//!   count   u32       primitives P
//!   prims   P × primitive record
//!   poses   K × 7 f64           quaternion x y z w, translation x y z
//!   deform  (deformable only)
//!           K × P × 7 f64       offset x y z, quaternion x y z w
//! ```
//!
//! A primitive record is 92 f64 (736 bytes): center (3), tangent_u (3),
//! tangent_v (3), log_scale_u, log_scale_v, opacity_logit, color SH as
//! 16 RGB triples (48), intensity SH (16), ray-drop SH (16).
//!
//! Every f64 is stored verbatim, so serialize → parse → serialize is
//! byte-identical.

use std::fs;
use std::path::Path;

use glam::{DQuat, DVec3};

use crate::error::{Error, Result};
use crate::math::Rigid;
use crate::model::{Gaussian2D, ShDegrees, SH_COEFFS, SH_MAX_DEGREE};
use crate::scene::{DeformFrame, NodeKind, SceneGraph, SceneNode};

const MAGIC: &[u8; 8] = b"SPLATSCN";
pub const VERSION: u32 = 1;

/// Serialize and write atomically. The scene is validated first; a file on
/// disk always holds a loadable graph.
pub fn write_scene_file(path: &Path, scene: &SceneGraph) -> Result<()> {
    scene.validate()?;
    super::atomic_write(path, &serialize_scene(scene))
}

/// Read, parse, and validate a scene file.
pub fn read_scene_file(path: &Path) -> Result<SceneGraph> {
    let scene = parse_scene(&fs::read(path)?)?;
    scene.validate()?;
    Ok(scene)
}

pub fn serialize_scene(scene: &SceneGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, scene.sh.color as u32);
    put_u32(&mut out, scene.sh.intensity as u32);
    put_u32(&mut out, scene.sh.raydrop as u32);
    put_u32(&mut out, scene.background.len() as u32);
    put_u32(&mut out, scene.nodes.len() as u32);
    put_u32(&mut out, scene.keyframes.len() as u32);
    for &t in &scene.keyframes {
        put_f64(&mut out, t);
    }
    for g in &scene.background {
        put_primitive(&mut out, g);
    }
    for node in &scene.nodes {
        out.push(match node.kind {
            NodeKind::Rigid => 0,
            NodeKind::Deformable => 1,
        });
        put_u32(&mut out, node.primitives.len() as u32);
        for g in &node.primitives {
            put_primitive(&mut out, g);
        }
        for pose in &node.poses {
            put_quat(&mut out, pose.rotation);
            put_vec3(&mut out, pose.translation);
        }
        if node.kind == NodeKind::Deformable {
            for table in &node.deform {
                for i in 0..table.offsets.len() {
                    put_vec3(&mut out, table.offsets[i]);
                    put_quat(&mut out, table.rotations[i]);
                }
            }
        }
    }
    out
}

pub fn parse_scene(bytes: &[u8]) -> Result<SceneGraph> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.bytes(8)?;
    if magic != MAGIC {
        return Err(Error::Format("not a scene file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let sh = ShDegrees {
        color: r.u32()? as usize,
        intensity: r.u32()? as usize,
        raydrop: r.u32()? as usize,
    };
    for d in [sh.color, sh.intensity, sh.raydrop] {
        if d > SH_MAX_DEGREE {
            return Err(Error::Format(format!("scene file declares SH degree {d}")));
        }
    }
    let n_background = r.u32()? as usize;
    let n_nodes = r.u32()? as usize;
    let n_keyframes = r.u32()? as usize;
    let mut keyframes = Vec::with_capacity(n_keyframes);
    for _ in 0..n_keyframes {
        keyframes.push(r.f64()?);
    }
    let mut background = Vec::with_capacity(n_background.min(1 << 20));
    for _ in 0..n_background {
        background.push(r.primitive()?);
    }
    let mut nodes = Vec::with_capacity(n_nodes.min(1 << 16));
    for _ in 0..n_nodes {
        let kind = match r.u8()? {
            0 => NodeKind::Rigid,
            1 => NodeKind::Deformable,
            k => return Err(Error::Format(format!("unknown node kind {k}"))),
        };
        let n_prims = r.u32()? as usize;
        let mut primitives = Vec::with_capacity(n_prims.min(1 << 20));
        for _ in 0..n_prims {
            primitives.push(r.primitive()?);
        }
        let mut poses = Vec::with_capacity(n_keyframes);
        for _ in 0..n_keyframes {
            let rotation = r.quat()?;
            let translation = r.vec3()?;
            poses.push(Rigid { rotation, translation });
        }
        let mut deform = Vec::new();
        if kind == NodeKind::Deformable {
            for _ in 0..n_keyframes {
                let mut offsets = Vec::with_capacity(n_prims);
                let mut rotations = Vec::with_capacity(n_prims);
                for _ in 0..n_prims {
                    offsets.push(r.vec3()?);
                    rotations.push(r.quat()?);
                }
                deform.push(DeformFrame { offsets, rotations });
            }
        }
        nodes.push(SceneNode { kind, primitives, poses, deform });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "scene file has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(SceneGraph { background, nodes, keyframes, sh })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_vec3(out: &mut Vec<u8>, v: DVec3) {
    put_f64(out, v.x);
    put_f64(out, v.y);
    put_f64(out, v.z);
}

fn put_quat(out: &mut Vec<u8>, q: DQuat) {
    put_f64(out, q.x);
    put_f64(out, q.y);
    put_f64(out, q.z);
    put_f64(out, q.w);
}

fn put_primitive(out: &mut Vec<u8>, g: &Gaussian2D) {
    put_vec3(out, g.center);
    put_vec3(out, g.tangent_u);
    put_vec3(out, g.tangent_v);
    put_f64(out, g.log_scale_u);
    put_f64(out, g.log_scale_v);
    put_f64(out, g.opacity_logit);
    for c in &g.sh_color {
        put_vec3(out, *c);
    }
    for &v in &g.sh_intensity {
        put_f64(out, v);
    }
    for &v in &g.sh_raydrop {
        put_f64(out, v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("scene file truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn vec3(&mut self) -> Result<DVec3> {
        Ok(DVec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn quat(&mut self) -> Result<DQuat> {
        let x = self.f64()?;
        let y = self.f64()?;
        let z = self.f64()?;
        let w = self.f64()?;
        Ok(DQuat::from_xyzw(x, y, z, w))
    }

    fn primitive(&mut self) -> Result<Gaussian2D> {
        let center = self.vec3()?;
        let tangent_u = self.vec3()?;
        let tangent_v = self.vec3()?;
        let log_scale_u = self.f64()?;
        let log_scale_v = self.f64()?;
        let opacity_logit = self.f64()?;
        let mut sh_color = [DVec3::ZERO; SH_COEFFS];
        for c in &mut sh_color {
            *c = self.vec3()?;
        }
        let mut sh_intensity = [0.0; SH_COEFFS];
        for v in &mut sh_intensity {
            *v = self.f64()?;
        }
        let mut sh_raydrop = [0.0; SH_COEFFS];
        for v in &mut sh_raydrop {
            *v = self.f64()?;
        }
        Ok(Gaussian2D {
            center,
            tangent_u,
            tangent_v,
            log_scale_u,
            log_scale_v,
            opacity_logit,
            sh_color,
            sh_intensity,
            sh_raydrop,
        })
    }
}
