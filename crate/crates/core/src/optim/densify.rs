//! Adaptive density control: primitives that keep receiving large
//! screen-space positional gradients are split (when large) or cloned
//! (when small), and primitives whose opacity has collapsed are pruned.
//! Optimizer state rows are remapped alongside the primitive lists.

use rand::Rng;

use crate::error::Result;
use crate::model::Gaussian2D;
use crate::optim::adam::{DensifyAccum, Moments, OptState};
use crate::scene::{DeformFrame, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyParams {
    /// Mean positional-gradient threshold that triggers split/clone.
    pub grad_threshold: f64,
    /// Opacity below this is pruned.
    pub alpha_threshold: f64,
    /// Fraction of scene extent above which a triggered primitive splits
    /// instead of cloning.
    pub split_scale_frac: f64,
    /// Scale divisor applied to split children.
    pub split_shrink: f64,
    /// Densify every this many iterations…
    pub interval: usize,
    /// …within the closed iteration window [start, stop].
    pub start: usize,
    pub stop: usize,
}

impl Default for DensifyParams {
    fn default() -> Self {
        DensifyParams {
            grad_threshold: 2e-4,
            alpha_threshold: 0.005,
            split_scale_frac: 0.01,
            split_shrink: 1.6,
            interval: 500,
            start: 500,
            stop: 15000,
        }
    }
}

impl DensifyParams {
    /// Does the schedule fire after completing iteration `iter` (1-based)?
    pub fn due(&self, iter: usize) -> bool {
        self.interval > 0 && iter >= self.start && iter <= self.stop && iter % self.interval == 0
    }
}

/// Counts from one densification pass. A split retires its parent, which
/// counts toward `pruned`, so the primitive count always changes by
/// exactly 2·splits + clones − pruned.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DensifyReport {
    pub splits: usize,
    pub clones: usize,
    pub pruned: usize,
}

impl DensifyReport {
    pub fn count_delta(&self) -> isize {
        2 * self.splits as isize + self.clones as isize - self.pruned as isize
    }

    fn merge(&mut self, o: DensifyReport) {
        self.splits += o.splits;
        self.clones += o.clones;
        self.pruned += o.pruned;
    }
}

enum Action {
    Keep,
    Prune,
    Clone2,
    Split,
}

fn decide(splat: &Gaussian2D, accum: &DensifyAccum, p: &DensifyParams, extent: f64) -> Action {
    let a = splat.activate();
    if a.alpha < p.alpha_threshold {
        return Action::Prune;
    }
    if accum.mean() > p.grad_threshold {
        if a.scale_u.max(a.scale_v) > p.split_scale_frac * extent {
            return Action::Split;
        }
        return Action::Clone2;
    }
    Action::Keep
}

/// Standard-normal pair via the Box–Muller transform.
fn gauss_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let th = std::f64::consts::TAU * u2;
    (r * th.cos(), r * th.sin())
}

fn split_child<R: Rng>(parent: &Gaussian2D, shrink: f64, rng: &mut R) -> Gaussian2D {
    let a = parent.activate();
    let (u, v) = gauss_pair(rng);
    let (u, v) = (u.clamp(-3.0, 3.0), v.clamp(-3.0, 3.0));
    let mut child = parent.clone();
    child.center = parent.center
        + parent.tangent_u * (u * a.scale_u)
        + parent.tangent_v * (v * a.scale_v);
    child.log_scale_u -= shrink.ln();
    child.log_scale_v -= shrink.ln();
    child
}

fn process_group<R: Rng>(
    prims: &mut Vec<Gaussian2D>,
    moments: &mut Vec<Moments>,
    deform: &mut [DeformFrame],
    accums: &[DensifyAccum],
    p: &DensifyParams,
    extent: f64,
    rng: &mut R,
) -> DensifyReport {
    let mut report = DensifyReport::default();
    let mut new_prims = Vec::with_capacity(prims.len());
    let mut new_moments = Vec::with_capacity(prims.len());
    // source row per new primitive, for rebuilding per-keyframe tables
    let mut sources = Vec::with_capacity(prims.len());
    for (i, splat) in prims.iter().enumerate() {
        match decide(splat, &accums[i], p, extent) {
            Action::Keep => {
                new_prims.push(splat.clone());
                new_moments.push(moments[i].clone());
                sources.push(i);
            }
            Action::Prune => report.pruned += 1,
            Action::Clone2 => {
                new_prims.push(splat.clone());
                new_moments.push(moments[i].clone());
                sources.push(i);
                new_prims.push(splat.clone());
                new_moments.push(Moments::zero());
                sources.push(i);
                report.clones += 1;
            }
            Action::Split => {
                for _ in 0..2 {
                    new_prims.push(split_child(splat, p.split_shrink, rng));
                    new_moments.push(Moments::zero());
                    sources.push(i);
                }
                report.splits += 1;
                report.pruned += 1; // the retired parent
            }
        }
    }
    for frame in deform {
        frame.offsets = sources.iter().map(|&s| frame.offsets[s]).collect();
        frame.rotations = sources.iter().map(|&s| frame.rotations[s]).collect();
    }
    *prims = new_prims;
    *moments = new_moments;
    report
}

/// One densification/pruning pass over every primitive group. Densify
/// statistics are consumed and reset.
pub fn densify_and_prune<R: Rng>(
    scene: &mut SceneGraph,
    state: &mut OptState,
    params: &DensifyParams,
    extent: f64,
    rng: &mut R,
) -> Result<DensifyReport> {
    if !state.matches(scene) {
        return Err(crate::error::Error::ShapeMismatch(
            "optimizer state does not match the scene".into(),
        ));
    }
    let mut report = process_group(
        &mut scene.background,
        &mut state.background,
        &mut [],
        &state.densify_background,
        params,
        extent,
        rng,
    );
    for (ni, node) in scene.nodes.iter_mut().enumerate() {
        report.merge(process_group(
            &mut node.primitives,
            &mut state.nodes[ni],
            &mut node.deform,
            &state.densify_nodes[ni],
            params,
            extent,
            rng,
        ));
    }
    state.densify_background = vec![DensifyAccum::default(); scene.background.len()];
    state.densify_nodes = scene
        .nodes
        .iter()
        .map(|n| vec![DensifyAccum::default(); n.primitives.len()])
        .collect();
    scene.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{sigmoid, Rigid};
    use crate::model::ShDegrees;
    use crate::optim::adam::GroupLrs;
    use crate::scene::{NodeKind, SceneNode};
    use glam::{DQuat, DVec3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn splat_at(x: f64, scale: f64, alpha: f64) -> Gaussian2D {
        Gaussian2D::from_activated(DVec3::new(x, 0.0, 0.0), DVec3::X, DVec3::Y, scale, scale, alpha)
    }

    #[test]
    fn all_below_thresholds_is_a_no_op() {
        let mut scene = SceneGraph::background_only(
            vec![splat_at(0.0, 0.3, 0.9), splat_at(1.0, 0.2, 0.5)],
            ShDegrees::default(),
        );
        let before = scene.clone();
        let mut state = OptState::new(&scene, GroupLrs::for_extent(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep =
            densify_and_prune(&mut scene, &mut state, &DensifyParams::default(), 1.0, &mut rng)
                .unwrap();
        assert_eq!(rep, DensifyReport::default());
        assert_eq!(scene, before);
    }

    #[test]
    fn collapsed_opacity_is_pruned() {
        let mut scene = SceneGraph::background_only(
            vec![splat_at(0.0, 0.3, 0.9), splat_at(1.0, 0.3, sigmoid(-10.0))],
            ShDegrees::default(),
        );
        let mut state = OptState::new(&scene, GroupLrs::for_extent(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rep =
            densify_and_prune(&mut scene, &mut state, &DensifyParams::default(), 1.0, &mut rng)
                .unwrap();
        assert_eq!(rep.pruned, 1);
        assert_eq!(scene.background.len(), 1);
        assert_eq!(scene.background[0].center.x, 0.0);
    }

    #[test]
    fn large_splat_splits_into_shrunken_children_inside_the_footprint() {
        let parent = splat_at(5.0, 0.4, 0.9);
        let mut scene =
            SceneGraph::background_only(vec![parent.clone()], ShDegrees::default());
        let mut state = OptState::new(&scene, GroupLrs::for_extent(1.0));
        state.densify_background[0] = DensifyAccum { sum: 1.0, count: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep =
            densify_and_prune(&mut scene, &mut state, &DensifyParams::default(), 1.0, &mut rng)
                .unwrap();
        assert_eq!((rep.splits, rep.pruned), (1, 1));
        assert_eq!(scene.background.len(), 2);
        for child in &scene.background {
            let a = child.activate();
            assert!((a.scale_u - 0.25).abs() < 1e-12, "scale {}", a.scale_u);
            assert!((a.scale_v - 0.25).abs() < 1e-12);
            let d = child.center - parent.center;
            assert!(d.dot(parent.tangent_u).abs() <= 3.0 * 0.4 + 1e-9);
            assert!(d.dot(parent.tangent_v).abs() <= 3.0 * 0.4 + 1e-9);
            assert!(d.dot(DVec3::Z).abs() < 1e-12); // stays in the disk plane
        }
    }

    #[test]
    fn small_splat_clones_in_place() {
        let mut scene =
            SceneGraph::background_only(vec![splat_at(0.0, 0.005, 0.9)], ShDegrees::default());
        let mut state = OptState::new(&scene, GroupLrs::for_extent(1.0));
        state.densify_background[0] = DensifyAccum { sum: 1.0, count: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rep =
            densify_and_prune(&mut scene, &mut state, &DensifyParams::default(), 1.0, &mut rng)
                .unwrap();
        assert_eq!((rep.clones, rep.splits, rep.pruned), (1, 0, 0));
        assert_eq!(scene.background.len(), 2);
        assert_eq!(scene.background[0], scene.background[1]);
    }

    #[test]
    fn bookkeeping_and_state_rows_stay_aligned() {
        let prims = vec![
            splat_at(0.0, 0.4, 0.9),            // split (stat set below)
            splat_at(1.0, 0.005, 0.9),          // clone
            splat_at(2.0, 0.3, sigmoid(-10.0)), // prune
            splat_at(3.0, 0.3, 0.8),            // keep
        ];
        let node = SceneNode {
            kind: NodeKind::Deformable,
            primitives: prims.clone(),
            poses: vec![Rigid::IDENTITY, Rigid::IDENTITY],
            deform: vec![
                DeformFrame {
                    offsets: vec![DVec3::ZERO; 4],
                    rotations: vec![DQuat::IDENTITY; 4],
                },
                DeformFrame {
                    offsets: vec![DVec3::X; 4],
                    rotations: vec![DQuat::IDENTITY; 4],
                },
            ],
        };
        let mut scene = SceneGraph {
            background: prims,
            nodes: vec![node],
            keyframes: vec![0.0, 1.0],
            sh: ShDegrees::default(),
        };
        let mut state = OptState::new(&scene, GroupLrs::for_extent(1.0));
        state.densify_background[0] = DensifyAccum { sum: 1.0, count: 1 };
        state.densify_background[1] = DensifyAccum { sum: 1.0, count: 1 };
        state.densify_nodes[0][0] = DensifyAccum { sum: 1.0, count: 1 };
        state.densify_nodes[0][1] = DensifyAccum { sum: 1.0, count: 1 };
        let before = scene.total_primitives() as isize;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rep =
            densify_and_prune(&mut scene, &mut state, &DensifyParams::default(), 1.0, &mut rng)
                .unwrap();
        // per group: 1 split, 1 clone, 1 alpha prune + 1 split parent
        assert_eq!((rep.splits, rep.clones, rep.pruned), (2, 2, 4));
        let after = scene.total_primitives() as isize;
        assert_eq!(after - before, rep.count_delta());
        assert!(state.matches(&scene));
        scene.validate().unwrap();
        // a fresh zero-gradient step must run without shape errors
        let grads = crate::scene::SceneGrad {
            background: vec![crate::model::SplatGrad::zero(); scene.background.len()],
            nodes: scene
                .nodes
                .iter()
                .map(|n| vec![crate::model::SplatGrad::zero(); n.primitives.len()])
                .collect(),
        };
        crate::optim::adam::adam_step(&mut scene, &grads, &mut state).unwrap();
    }

    #[test]
    fn schedule_fires_only_inside_the_window() {
        let p = DensifyParams::default();
        assert!(!p.due(499));
        assert!(p.due(500));
        assert!(!p.due(750));
        assert!(p.due(1000));
        assert!(p.due(15000));
        assert!(!p.due(15500));
    }
}
