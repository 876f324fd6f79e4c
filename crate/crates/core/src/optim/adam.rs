//! Adaptive-moment (Adam) updates over the scene graph's primitive
//! parameters, with per-group learning rates and moment/densification
//! state that tracks the live primitive set.

use glam::DVec3;

use crate::error::{Error, Result};
use crate::math::orthonormalize_pair;
use crate::model::{Gaussian2D, SplatGrad, SH_COEFFS};
use crate::scene::{SceneGraph, SceneGrad};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Learning rates per parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupLrs {
    pub center: f64,
    pub tangent: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl GroupLrs {
    /// Standard rates; center steps scale with the scene extent so the
    /// same settings work across scene sizes.
    pub fn for_extent(extent: f64) -> GroupLrs {
        GroupLrs {
            center: 1.6e-4 * extent,
            tangent: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
        }
    }
}

/// First/second moment accumulators for one primitive, mirroring its
/// parameter layout.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: SplatGrad,
    pub v: SplatGrad,
}

impl Moments {
    pub fn zero() -> Moments {
        Moments { m: SplatGrad::zero(), v: SplatGrad::zero() }
    }
}

/// Running densification signal for one primitive: accumulated
/// screen-space positional gradient norm and the number of passes that
/// saw the primitive.
#[derive(Debug, Clone, Copy, Default)]
pub struct DensifyAccum {
    pub sum: f64,
    pub count: u32,
}

impl DensifyAccum {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Optimizer state: step count, learning rates, per-primitive moments and
/// densification statistics, shaped background-first then per node.
#[derive(Debug, Clone)]
pub struct OptState {
    pub step: u64,
    pub lrs: GroupLrs,
    pub background: Vec<Moments>,
    pub nodes: Vec<Vec<Moments>>,
    pub densify_background: Vec<DensifyAccum>,
    pub densify_nodes: Vec<Vec<DensifyAccum>>,
}

impl OptState {
    pub fn new(scene: &SceneGraph, lrs: GroupLrs) -> OptState {
        OptState {
            step: 0,
            lrs,
            background: vec![Moments::zero(); scene.background.len()],
            nodes: scene
                .nodes
                .iter()
                .map(|n| vec![Moments::zero(); n.primitives.len()])
                .collect(),
            densify_background: vec![DensifyAccum::default(); scene.background.len()],
            densify_nodes: scene
                .nodes
                .iter()
                .map(|n| vec![DensifyAccum::default(); n.primitives.len()])
                .collect(),
        }
    }

    pub fn matches(&self, scene: &SceneGraph) -> bool {
        self.background.len() == scene.background.len()
            && self.densify_background.len() == scene.background.len()
            && self.nodes.len() == scene.nodes.len()
            && self.densify_nodes.len() == scene.nodes.len()
            && self
                .nodes
                .iter()
                .zip(&scene.nodes)
                .all(|(m, n)| m.len() == n.primitives.len())
            && self
                .densify_nodes
                .iter()
                .zip(&scene.nodes)
                .all(|(d, n)| d.len() == n.primitives.len())
    }

    pub fn reset_densify(&mut self) {
        for a in &mut self.densify_background {
            *a = DensifyAccum::default();
        }
        for node in &mut self.densify_nodes {
            for a in node {
                *a = DensifyAccum::default();
            }
        }
    }
}

/// One bias-corrected adaptive-moment update for a scalar; returns the
/// step to subtract from the parameter.
#[inline]
pub fn adam_scalar(m: &mut f64, v: &mut f64, g: f64, lr: f64, bc1: f64, bc2: f64) -> f64 {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    lr * (*m / bc1) / ((*v / bc2).sqrt() + EPSILON)
}

#[inline]
fn adam_vec(m: &mut DVec3, v: &mut DVec3, g: DVec3, lr: f64, bc1: f64, bc2: f64) -> DVec3 {
    DVec3::new(
        adam_scalar(&mut m.x, &mut v.x, g.x, lr, bc1, bc2),
        adam_scalar(&mut m.y, &mut v.y, g.y, lr, bc1, bc2),
        adam_scalar(&mut m.z, &mut v.z, g.z, lr, bc1, bc2),
    )
}

fn check_finite(grads: &[SplatGrad]) -> Result<()> {
    for g in grads {
        for (val, group) in [
            (g.center.is_finite(), "centers"),
            (
                g.tangent_u.is_finite() && g.tangent_v.is_finite(),
                "tangents",
            ),
            (
                g.log_scale_u.is_finite() && g.log_scale_v.is_finite(),
                "scales",
            ),
            (g.opacity_logit.is_finite(), "opacity"),
            (
                g.sh_color.iter().all(|c| c.is_finite())
                    && g.sh_intensity.iter().all(|c| c.is_finite())
                    && g.sh_raydrop.iter().all(|c| c.is_finite()),
                "sh",
            ),
        ] {
            if !val {
                return Err(Error::NonFinite(format!(
                    "gradient for parameter group '{group}'"
                )));
            }
        }
    }
    Ok(())
}

fn update_splat(
    splat: &mut Gaussian2D,
    g: &SplatGrad,
    mo: &mut Moments,
    lrs: &GroupLrs,
    bc1: f64,
    bc2: f64,
) {
    splat.center -= adam_vec(&mut mo.m.center, &mut mo.v.center, g.center, lrs.center, bc1, bc2);
    splat.tangent_u -= adam_vec(
        &mut mo.m.tangent_u,
        &mut mo.v.tangent_u,
        g.tangent_u,
        lrs.tangent,
        bc1,
        bc2,
    );
    splat.tangent_v -= adam_vec(
        &mut mo.m.tangent_v,
        &mut mo.v.tangent_v,
        g.tangent_v,
        lrs.tangent,
        bc1,
        bc2,
    );
    splat.log_scale_u -= adam_scalar(
        &mut mo.m.log_scale_u,
        &mut mo.v.log_scale_u,
        g.log_scale_u,
        lrs.log_scale,
        bc1,
        bc2,
    );
    splat.log_scale_v -= adam_scalar(
        &mut mo.m.log_scale_v,
        &mut mo.v.log_scale_v,
        g.log_scale_v,
        lrs.log_scale,
        bc1,
        bc2,
    );
    splat.opacity_logit -= adam_scalar(
        &mut mo.m.opacity_logit,
        &mut mo.v.opacity_logit,
        g.opacity_logit,
        lrs.opacity,
        bc1,
        bc2,
    );
    for i in 0..SH_COEFFS {
        splat.sh_color[i] -= adam_vec(
            &mut mo.m.sh_color[i],
            &mut mo.v.sh_color[i],
            g.sh_color[i],
            lrs.sh,
            bc1,
            bc2,
        );
        splat.sh_intensity[i] -= adam_scalar(
            &mut mo.m.sh_intensity[i],
            &mut mo.v.sh_intensity[i],
            g.sh_intensity[i],
            lrs.sh,
            bc1,
            bc2,
        );
        splat.sh_raydrop[i] -= adam_scalar(
            &mut mo.m.sh_raydrop[i],
            &mut mo.v.sh_raydrop[i],
            g.sh_raydrop[i],
            lrs.sh,
            bc1,
            bc2,
        );
    }
    // keep the tangent frame orthonormal; scales carry the magnitudes
    let (u, v) = orthonormalize_pair(splat.tangent_u, splat.tangent_v);
    splat.tangent_u = u;
    splat.tangent_v = v;
}

/// Apply one optimizer step to every primitive. Gradient shapes must match
/// the scene; non-finite gradients abort naming the offending group, with
/// the scene left untouched.
pub fn adam_step(scene: &mut SceneGraph, grads: &SceneGrad, state: &mut OptState) -> Result<()> {
    if grads.background.len() != scene.background.len()
        || grads.nodes.len() != scene.nodes.len()
        || grads
            .nodes
            .iter()
            .zip(&scene.nodes)
            .any(|(g, n)| g.len() != n.primitives.len())
    {
        return Err(Error::ShapeMismatch(
            "gradient layout does not match the scene".into(),
        ));
    }
    if !state.matches(scene) {
        return Err(Error::ShapeMismatch(
            "optimizer state does not match the scene".into(),
        ));
    }
    check_finite(&grads.background)?;
    for node in &grads.nodes {
        check_finite(node)?;
    }

    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    let lrs = state.lrs;
    for (i, splat) in scene.background.iter_mut().enumerate() {
        update_splat(splat, &grads.background[i], &mut state.background[i], &lrs, bc1, bc2);
    }
    for (ni, node) in scene.nodes.iter_mut().enumerate() {
        for (i, splat) in node.primitives.iter_mut().enumerate() {
            update_splat(splat, &grads.nodes[ni][i], &mut state.nodes[ni][i], &lrs, bc1, bc2);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ShDegrees;
    use approx::assert_relative_eq;

    fn plane_scene(n: usize) -> SceneGraph {
        let splats = (0..n)
            .map(|i| {
                Gaussian2D::from_activated(
                    DVec3::new(i as f64, 0.0, 0.0),
                    DVec3::X,
                    DVec3::Y,
                    0.3,
                    0.3,
                    0.7,
                )
            })
            .collect();
        SceneGraph::background_only(splats, ShDegrees::default())
    }

    #[test]
    fn zero_gradients_change_only_the_step_count() {
        let mut scene = plane_scene(3);
        let before = scene.clone();
        let mut state = OptState::new(&scene, GroupLrs::for_extent(1.0));
        let grads = SceneGrad {
            background: vec![SplatGrad::zero(); 3],
            nodes: Vec::new(),
        };
        adam_step(&mut scene, &grads, &mut state).unwrap();
        assert_eq!(scene, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_magnitude_is_the_learning_rate() {
        // constant gradient 1 on one scalar: both bias-corrected moments
        // become exactly 1, so the step is lr / (1 + eps)
        let (mut m, mut v) = (0.0, 0.0);
        let step = adam_scalar(&mut m, &mut v, 1.0, 0.01, 1.0 - BETA1, 1.0 - BETA2);
        assert_relative_eq!(step, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut x: f64 = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=200 {
            let g = 2.0 * x;
            let bc1 = 1.0 - BETA1.powi(t);
            let bc2 = 1.0 - BETA2.powi(t);
            x -= adam_scalar(&mut m, &mut v, g, 0.05, bc1, bc2);
        }
        assert!(x.abs() < 1e-2, "x = {x}");
    }

    #[test]
    fn non_finite_gradient_names_the_group() {
        let mut scene = plane_scene(2);
        let mut state = OptState::new(&scene, GroupLrs::for_extent(1.0));
        let mut grads = SceneGrad {
            background: vec![SplatGrad::zero(); 2],
            nodes: Vec::new(),
        };
        grads.background[1].opacity_logit = f64::NAN;
        let err = adam_step(&mut scene, &grads, &mut state).unwrap_err();
        assert!(err.to_string().contains("opacity"), "{err}");
        assert_eq!(state.step, 0);
    }

    #[test]
    fn tangents_stay_orthonormal() {
        let mut scene = plane_scene(1);
        let mut state = OptState::new(&scene, GroupLrs::for_extent(1.0));
        let mut grads = SceneGrad {
            background: vec![SplatGrad::zero(); 1],
            nodes: Vec::new(),
        };
        grads.background[0].tangent_u = DVec3::new(0.3, 1.0, -0.2);
        grads.background[0].tangent_v = DVec3::new(-0.5, 0.1, 0.9);
        for _ in 0..5 {
            adam_step(&mut scene, &grads, &mut state).unwrap();
        }
        let s = &scene.background[0];
        assert_relative_eq!(s.tangent_u.length(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.tangent_v.length(), 1.0, epsilon = 1e-12);
        assert!(s.tangent_u.dot(s.tangent_v).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut scene = plane_scene(2);
        let mut state = OptState::new(&scene, GroupLrs::for_extent(1.0));
        let grads = SceneGrad {
            background: vec![SplatGrad::zero(); 3],
            nodes: Vec::new(),
        };
        assert!(adam_step(&mut scene, &grads, &mut state).is_err());
    }
}
