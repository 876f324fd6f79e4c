//! Scene graph: a static background plus movable nodes, each holding
//! primitives in canonical space together with a pose (and, for deformable
//! nodes, per-primitive offset) timeline over shared keyframes. `flatten`
//! produces the world-space primitive set at a query time.

use glam::{DQuat, DVec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{interpolate_rigid, slerp, Aabb, Rigid};
use crate::model::{Gaussian2D, ShDegrees, SplatGrad};

/// Identifies the node a flattened primitive came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Background,
    Node(usize),
}

/// Per-keyframe deformation of one node: a displacement and a tangent-frame
/// rotation per primitive, applied in canonical space before the node pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformFrame {
    pub offsets: Vec<DVec3>,
    pub rotations: Vec<DQuat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Rigid,
    Deformable,
}

/// A movable node: canonical-space primitives plus one pose per keyframe
/// (and one deform table per keyframe when deformable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub kind: NodeKind,
    pub primitives: Vec<Gaussian2D>,
    /// One pose per graph keyframe: canonical → world.
    pub poses: Vec<Rigid>,
    /// One table per graph keyframe; present iff `kind == Deformable`.
    pub deform: Vec<DeformFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub background: Vec<Gaussian2D>,
    pub nodes: Vec<SceneNode>,
    /// Strictly increasing timestamps (seconds). May be empty when the graph
    /// has no movable nodes; then any query time is valid.
    pub keyframes: Vec<f64>,
    pub sh: ShDegrees,
}

impl SceneGraph {
    pub fn background_only(background: Vec<Gaussian2D>, sh: ShDegrees) -> Self {
        SceneGraph { background, nodes: Vec::new(), keyframes: Vec::new(), sh }
    }

    pub fn total_primitives(&self) -> usize {
        self.background.len() + self.nodes.iter().map(|n| n.primitives.len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        self.sh.validate()?;
        if !self.keyframes.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Contract(
                "keyframe timestamps must be strictly increasing".into(),
            ));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.poses.len() != self.keyframes.len() {
                return Err(Error::ShapeMismatch(format!(
                    "node {i}: {} poses for {} keyframes",
                    node.poses.len(),
                    self.keyframes.len()
                )));
            }
            match node.kind {
                NodeKind::Rigid => {
                    if !node.deform.is_empty() {
                        return Err(Error::Contract(format!(
                            "node {i}: rigid node carries deform tables"
                        )));
                    }
                }
                NodeKind::Deformable => {
                    if node.deform.len() != self.keyframes.len() {
                        return Err(Error::ShapeMismatch(format!(
                            "node {i}: {} deform tables for {} keyframes",
                            node.deform.len(),
                            self.keyframes.len()
                        )));
                    }
                    for (k, frame) in node.deform.iter().enumerate() {
                        if frame.offsets.len() != node.primitives.len()
                            || frame.rotations.len() != node.primitives.len()
                        {
                            return Err(Error::ShapeMismatch(format!(
                                "node {i} keyframe {k}: deform table length mismatch"
                            )));
                        }
                    }
                }
            }
            for pose in &node.poses {
                if (pose.rotation.length() - 1.0).abs() > 1e-6 {
                    return Err(Error::Contract(format!(
                        "node {i}: pose rotation is not a unit quaternion"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Locate `t` in the keyframe table: exact index, or bracketing pair with
    /// interpolation weight. Exact hits reproduce keyframe data verbatim.
    fn bracket(&self, t: f64) -> Result<(usize, usize, f64)> {
        let keys = &self.keyframes;
        if keys.is_empty() {
            return Ok((0, 0, 0.0));
        }
        let (first, last) = (keys[0], keys[keys.len() - 1]);
        if t < first || t > last {
            return Err(Error::TimeOutOfRange { t, first, last });
        }
        if let Ok(i) = keys.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            return Ok((i, i, 0.0));
        }
        let hi = keys.partition_point(|k| *k < t);
        let lo = hi - 1;
        Ok((lo, hi, (t - keys[lo]) / (keys[hi] - keys[lo])))
    }

    /// World-space primitive set at time `t`.
    pub fn flatten(&self, t: f64) -> Result<FlatScene> {
        let (lo, hi, w) = self.bracket(t)?;
        let n = self.total_primitives();
        let mut splats = Vec::with_capacity(n);
        let mut provenance = Vec::with_capacity(n);
        let mut center_rot = Vec::with_capacity(n);
        let mut frame_rot = Vec::with_capacity(n);

        for (i, g) in self.background.iter().enumerate() {
            splats.push(g.clone());
            provenance.push((NodeId::Background, i));
            center_rot.push(DQuat::IDENTITY);
            frame_rot.push(DQuat::IDENTITY);
        }

        for (ni, node) in self.nodes.iter().enumerate() {
            let pose = if node.poses.is_empty() {
                Rigid::IDENTITY
            } else if lo == hi {
                node.poses[lo]
            } else {
                interpolate_rigid(&node.poses[lo], &node.poses[hi], w)
            };
            for (pi, g) in node.primitives.iter().enumerate() {
                let mut out = g.clone();
                let mut local_rot = DQuat::IDENTITY;
                if node.kind == NodeKind::Deformable {
                    let (off, rot) = if lo == hi {
                        (node.deform[lo].offsets[pi], node.deform[lo].rotations[pi])
                    } else {
                        (
                            node.deform[lo].offsets[pi]
                                .lerp(node.deform[hi].offsets[pi], w),
                            slerp(
                                node.deform[lo].rotations[pi],
                                node.deform[hi].rotations[pi],
                                w,
                            ),
                        )
                    };
                    out.center += off;
                    out.tangent_u = rot * out.tangent_u;
                    out.tangent_v = rot * out.tangent_v;
                    local_rot = rot;
                }
                out.center = pose.apply(out.center);
                out.tangent_u = pose.rotate(out.tangent_u);
                out.tangent_v = pose.rotate(out.tangent_v);
                splats.push(out);
                provenance.push((NodeId::Node(ni), pi));
                center_rot.push(pose.rotation);
                frame_rot.push((pose.rotation * local_rot).normalize());
            }
        }

        Ok(FlatScene { splats, provenance, center_rot, frame_rot, sh: self.sh })
    }

    /// Route world-space parameter gradients back to canonical-space storage:
    /// center and tangent gradients rotate by the inverse of the transform
    /// each primitive received; everything else passes through. Node poses
    /// and deform tables are frozen (no gradients).
    pub fn flatten_backward(&self, flat: &FlatScene, grads: &[SplatGrad]) -> Result<SceneGrad> {
        if grads.len() != flat.splats.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients for {} flattened primitives",
                grads.len(),
                flat.splats.len()
            )));
        }
        let mut out = SceneGrad {
            background: vec![SplatGrad::zero(); self.background.len()],
            nodes: self
                .nodes
                .iter()
                .map(|n| vec![SplatGrad::zero(); n.primitives.len()])
                .collect(),
        };
        for (wi, grad) in grads.iter().enumerate() {
            let (node_id, pi) = flat.provenance[wi];
            let slot = match node_id {
                NodeId::Background => &mut out.background[pi],
                NodeId::Node(ni) => &mut out.nodes[ni][pi],
            };
            let mut g = grad.clone();
            let inv_center = flat.center_rot[wi].conjugate();
            let inv_frame = flat.frame_rot[wi].conjugate();
            g.center = inv_center * g.center;
            g.tangent_u = inv_frame * g.tangent_u;
            g.tangent_v = inv_frame * g.tangent_v;
            slot.add_assign(&g);
        }
        Ok(out)
    }
}

/// Flattened world-space scene at one query time.
#[derive(Debug, Clone)]
pub struct FlatScene {
    pub splats: Vec<Gaussian2D>,
    /// (originating node, index within that node) per flattened primitive.
    pub provenance: Vec<(NodeId, usize)>,
    /// Rotation applied to each primitive's center (node pose rotation).
    center_rot: Vec<DQuat>,
    /// Rotation applied to each primitive's tangents (pose × deform).
    frame_rot: Vec<DQuat>,
    pub sh: ShDegrees,
}

impl FlatScene {
    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Inverse of the flatten index map.
    pub fn invert_provenance(&self, world_index: usize) -> Result<(NodeId, usize)> {
        self.provenance
            .get(world_index)
            .copied()
            .ok_or(Error::IndexOutOfBounds { index: world_index, len: self.provenance.len() })
    }

    /// Scene extent: half-diagonal of the bounding box of primitive centers,
    /// used to scale position learning rates and densification thresholds.
    pub fn extent(&self) -> f64 {
        if self.splats.is_empty() {
            return 1.0;
        }
        let bb = Aabb::from_points(
            &self.splats.iter().map(|g| g.center).collect::<Vec<_>>(),
        );
        (0.5 * (bb.max - bb.min).length()).max(1e-6)
    }

    /// Directly wrap a world-space primitive list (tests, synthetic data).
    pub fn from_splats(splats: Vec<Gaussian2D>, sh: ShDegrees) -> Self {
        let n = splats.len();
        FlatScene {
            splats,
            provenance: (0..n).map(|i| (NodeId::Background, i)).collect(),
            center_rot: vec![DQuat::IDENTITY; n],
            frame_rot: vec![DQuat::IDENTITY; n],
            sh,
        }
    }
}

/// Gradients in canonical-space storage layout, aligned with the graph.
#[derive(Debug, Clone)]
pub struct SceneGrad {
    pub background: Vec<SplatGrad>,
    pub nodes: Vec<Vec<SplatGrad>>,
}

impl SceneGrad {
    pub fn iter_mut_all(&mut self) -> impl Iterator<Item = &mut SplatGrad> {
        self.background
            .iter_mut()
            .chain(self.nodes.iter_mut().flat_map(|n| n.iter_mut()))
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &SplatGrad> {
        self.background
            .iter()
            .chain(self.nodes.iter().flat_map(|n| n.iter()))
    }
}
