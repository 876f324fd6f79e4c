//! Small numeric helpers: activations, rigid transforms, pose interpolation
//! and axis-aligned boxes. All geometry runs in f64.

use glam::{DQuat, DVec3};
use serde::{Deserialize, Serialize};

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]. `p` must lie strictly inside (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// d sigmoid(x) / dx expressed through the activated value.
#[inline]
pub fn sigmoid_grad_from_value(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rigid {
    pub rotation: DQuat,
    pub translation: DVec3,
}

impl Rigid {
    pub const IDENTITY: Rigid = Rigid {
        rotation: DQuat::IDENTITY,
        translation: DVec3::ZERO,
    };

    pub fn new(rotation: DQuat, translation: DVec3) -> Self {
        Self { rotation, translation }
    }

    #[inline]
    pub fn apply(&self, p: DVec3) -> DVec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn rotate(&self, v: DVec3) -> DVec3 {
        self.rotation * v
    }

    /// Inverse transform: x = R^T (y - t).
    pub fn inverse(&self) -> Rigid {
        let inv_rot = self.rotation.conjugate();
        Rigid {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation),
        }
    }

    /// self ∘ other (apply `other` first).
    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            rotation: (self.rotation * other.rotation).normalize(),
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Spherical linear interpolation with the shortest-arc sign convention.
///
/// Falls back to normalized lerp when the endpoints are nearly parallel.
pub fn slerp(q0: DQuat, q1: DQuat, w: f64) -> DQuat {
    let mut dot = q0.dot(q1);
    let q1 = if dot < 0.0 {
        dot = -dot;
        -q1
    } else {
        q1
    };
    if dot > 1.0 - 1e-10 {
        let q = DQuat::from_xyzw(
            q0.x + w * (q1.x - q0.x),
            q0.y + w * (q1.y - q0.y),
            q0.z + w * (q1.z - q0.z),
            q0.w + w * (q1.w - q0.w),
        );
        return q.normalize();
    }
    let theta = dot.clamp(-1.0, 1.0).acos();
    let sin_theta = theta.sin();
    let a = ((1.0 - w) * theta).sin() / sin_theta;
    let b = (w * theta).sin() / sin_theta;
    DQuat::from_xyzw(
        a * q0.x + b * q1.x,
        a * q0.y + b * q1.y,
        a * q0.z + b * q1.z,
        a * q0.w + b * q1.w,
    )
}

/// Interpolate two rigid poses: slerp on rotation, lerp on translation.
pub fn interpolate_rigid(a: &Rigid, b: &Rigid, w: f64) -> Rigid {
    Rigid {
        rotation: slerp(a.rotation, b.rotation, w),
        translation: a.translation.lerp(b.translation, w),
    }
}

/// Vector-Jacobian product of `d = r / |r|`: given the gradient on the unit
/// vector, return the gradient on the raw vector `r`.
#[inline]
pub fn normalize_vjp(raw: DVec3, grad_unit: DVec3) -> DVec3 {
    let len = raw.length();
    let d = raw / len;
    (grad_unit - d * d.dot(grad_unit)) / len
}

/// Re-orthonormalize a tangent pair: normalize `u`, project `v` off `u`.
pub fn orthonormalize_pair(u: DVec3, v: DVec3) -> (DVec3, DVec3) {
    let u = u.normalize();
    let v = (v - u * v.dot(u)).normalize();
    (u, v)
}

/// Deterministic orthonormal frame with `n` as the third axis.
pub fn any_orthonormal_frame(n: DVec3) -> (DVec3, DVec3) {
    let n = n.normalize();
    let helper = if n.x.abs() < 0.9 { DVec3::X } else { DVec3::Y };
    let u = n.cross(helper).normalize();
    let v = n.cross(u);
    (u, v)
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: DVec3,
    pub max: DVec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: DVec3::splat(f64::INFINITY),
        max: DVec3::splat(f64::NEG_INFINITY),
    };

    pub fn from_points(points: &[DVec3]) -> Aabb {
        let mut b = Aabb::EMPTY;
        for p in points {
            b.grow_point(*p);
        }
        b
    }

    #[inline]
    pub fn grow_point(&mut self, p: DVec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    #[inline]
    pub fn grow_box(&mut self, other: &Aabb) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    #[inline]
    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.min.cmple(other.min).all() && self.max.cmpge(other.max).all()
    }

    pub fn surface_area(&self) -> f64 {
        if self.min.cmpgt(self.max).any() {
            return 0.0;
        }
        let d = self.max - self.min;
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    pub fn centroid(&self) -> DVec3 {
        0.5 * (self.min + self.max)
    }

    /// Slab test returning the entry distance, or `None` if the ray misses.
    /// A small relative epsilon pads the exit so grazing hits are kept.
    #[inline]
    pub fn ray_entry(&self, origin: DVec3, inv_dir: DVec3, t_max: f64) -> Option<f64> {
        let t0 = (self.min - origin) * inv_dir;
        let t1 = (self.max - origin) * inv_dir;
        let lo = t0.min(t1);
        let hi = t0.max(t1);
        let t_enter = lo.max_element().max(0.0);
        let t_exit = hi.min_element() * 1.000_000_1;
        if t_enter <= t_exit && t_enter <= t_max {
            Some(t_enter)
        } else {
            None
        }
    }
}
