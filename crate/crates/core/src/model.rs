//! The 2D Gaussian surfel primitive: raw (optimizable) parameters, their
//! activations, spherical-harmonics appearance, and the shared kernel.

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, logit};

/// Coefficient slots per SH channel (degree 3 → (3+1)² = 16).
pub const SH_COEFFS: usize = 16;

pub const SH_MAX_DEGREE: usize = 3;

/// Number of coefficients used by an SH expansion of `degree`.
#[inline]
pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Active SH degrees per appearance channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShDegrees {
    pub color: usize,
    pub intensity: usize,
    pub raydrop: usize,
}

impl Default for ShDegrees {
    fn default() -> Self {
        // Color keeps full view dependence; intensity and ray-drop are
        // lower-frequency signals.
        ShDegrees { color: 3, intensity: 2, raydrop: 1 }
    }
}

impl ShDegrees {
    pub fn validate(&self) -> Result<()> {
        for d in [self.color, self.intensity, self.raydrop] {
            if d > SH_MAX_DEGREE {
                return Err(Error::UnsupportedDegree(d));
            }
        }
        Ok(())
    }
}

/// One surfel. All fields are raw optimizer parameters: scales are stored as
/// logs, opacity as a logit, so the search space is unconstrained. The tangent
/// pair is kept orthonormal by re-projection after each optimizer step, not by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub center: DVec3,
    pub tangent_u: DVec3,
    pub tangent_v: DVec3,
    pub log_scale_u: f64,
    pub log_scale_v: f64,
    pub opacity_logit: f64,
    /// RGB coefficients per SH slot; decoded as clamp(Σ c·Y + 0.5, 0, 1).
    pub sh_color: [DVec3; SH_COEFFS],
    /// Scalar coefficients; decoded through a sigmoid.
    pub sh_intensity: [f64; SH_COEFFS],
    /// Scalar coefficients; decoded through a sigmoid.
    pub sh_raydrop: [f64; SH_COEFFS],
}

/// Activated (constrained) view of the nonlinear parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activated {
    pub scale_u: f64,
    pub scale_v: f64,
    pub alpha: f64,
}

impl Gaussian2D {
    /// Build a surfel from already-constrained values; SH blocks start zero
    /// (color decodes to 0.5 grey, intensity/ray-drop to 0.5).
    pub fn from_activated(
        center: DVec3,
        tangent_u: DVec3,
        tangent_v: DVec3,
        scale_u: f64,
        scale_v: f64,
        alpha: f64,
    ) -> Self {
        Gaussian2D {
            center,
            tangent_u,
            tangent_v,
            log_scale_u: scale_u.ln(),
            log_scale_v: scale_v.ln(),
            opacity_logit: logit(alpha),
            sh_color: [DVec3::ZERO; SH_COEFFS],
            sh_intensity: [0.0; SH_COEFFS],
            sh_raydrop: [0.0; SH_COEFFS],
        }
    }

    /// Set the view-independent term so the decoded color equals `rgb`.
    pub fn set_base_color(&mut self, rgb: DVec3) {
        self.sh_color[0] = (rgb - DVec3::splat(0.5)) / SH_C0;
    }

    /// Set the view-independent term so the decoded intensity equals `i`.
    pub fn set_base_intensity(&mut self, i: f64) {
        self.sh_intensity[0] = logit(i) / SH_C0;
    }

    /// Set the view-independent term so the decoded ray-drop equals `r`.
    pub fn set_base_raydrop(&mut self, r: f64) {
        self.sh_raydrop[0] = logit(r) / SH_C0;
    }

    #[inline]
    pub fn activate(&self) -> Activated {
        Activated {
            scale_u: self.log_scale_u.exp(),
            scale_v: self.log_scale_v.exp(),
            alpha: sigmoid(self.opacity_logit),
        }
    }

    /// Geometric normal t_u × t_v, normalized. Errors if the tangents are
    /// (near) parallel.
    pub fn normal(&self) -> Result<DVec3> {
        let n = self.tangent_u.cross(self.tangent_v);
        let len = n.length();
        if len < 1e-9 {
            return Err(Error::Contract(
                "degenerate tangent frame: tangents are parallel".into(),
            ));
        }
        Ok(n / len)
    }

    /// Normal flipped to face a sensor looking along `view_dir`
    /// (splat minus sensor): the returned normal satisfies n·view_dir ≤ 0.
    pub fn normal_toward(&self, view_dir: DVec3) -> Result<DVec3> {
        let n = self.normal()?;
        Ok(if n.dot(view_dir) > 0.0 { -n } else { n })
    }

    /// Check the tangent-frame invariants (unit length, orthogonality).
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-6;
        if (self.tangent_u.length() - 1.0).abs() > tol
            || (self.tangent_v.length() - 1.0).abs() > tol
        {
            return Err(Error::Contract("tangent vectors must be unit length".into()));
        }
        if self.tangent_u.dot(self.tangent_v).abs() > tol {
            return Err(Error::Contract("tangent vectors must be orthogonal".into()));
        }
        if !self.center.is_finite() {
            return Err(Error::NonFinite("gaussian center".into()));
        }
        Ok(())
    }
}

/// Standard 2D Gaussian kernel at scaled tangent coordinates (u, v).
#[inline]
pub fn gaussian_value(u: f64, v: f64) -> f64 {
    (-0.5 * (u * u + v * v)).exp()
}

/// Gradient accumulator mirroring [`Gaussian2D`]'s raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatGrad {
    pub center: DVec3,
    pub tangent_u: DVec3,
    pub tangent_v: DVec3,
    pub log_scale_u: f64,
    pub log_scale_v: f64,
    pub opacity_logit: f64,
    pub sh_color: [DVec3; SH_COEFFS],
    pub sh_intensity: [f64; SH_COEFFS],
    pub sh_raydrop: [f64; SH_COEFFS],
}

impl SplatGrad {
    pub fn zero() -> Self {
        SplatGrad {
            center: DVec3::ZERO,
            tangent_u: DVec3::ZERO,
            tangent_v: DVec3::ZERO,
            log_scale_u: 0.0,
            log_scale_v: 0.0,
            opacity_logit: 0.0,
            sh_color: [DVec3::ZERO; SH_COEFFS],
            sh_intensity: [0.0; SH_COEFFS],
            sh_raydrop: [0.0; SH_COEFFS],
        }
    }

    pub fn add_assign(&mut self, o: &SplatGrad) {
        self.center += o.center;
        self.tangent_u += o.tangent_u;
        self.tangent_v += o.tangent_v;
        self.log_scale_u += o.log_scale_u;
        self.log_scale_v += o.log_scale_v;
        self.opacity_logit += o.opacity_logit;
        for i in 0..SH_COEFFS {
            self.sh_color[i] += o.sh_color[i];
            self.sh_intensity[i] += o.sh_intensity[i];
            self.sh_raydrop[i] += o.sh_raydrop[i];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.center.is_finite()
            && self.tangent_u.is_finite()
            && self.tangent_v.is_finite()
            && self.log_scale_u.is_finite()
            && self.log_scale_v.is_finite()
            && self.opacity_logit.is_finite()
            && self.sh_color.iter().all(|c| c.is_finite())
            && self.sh_intensity.iter().all(|c| c.is_finite())
            && self.sh_raydrop.iter().all(|c| c.is_finite())
    }
}

impl Default for SplatGrad {
    fn default() -> Self {
        Self::zero()
    }
}

// Real SH basis constants (Y₀₀ = 1/(2√π) convention), listed in the standard
// splatting order: within each band the usual (y, z, x)-flavoured sequence.
pub const SH_C0: f64 = 0.28209479177387814;
pub const SH_C1: f64 = 0.4886025119029199;
pub const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
pub const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -1.445305721320277,
    1.445305721320277,
    -0.5900435899266435,
];

/// Evaluate the real SH basis functions up to `degree` at direction `d`
/// (assumed unit). Slots beyond the active degree stay zero.
pub fn sh_basis(degree: usize, d: DVec3) -> [f64; SH_COEFFS] {
    debug_assert!(degree <= SH_MAX_DEGREE);
    let mut b = [0.0; SH_COEFFS];
    b[0] = SH_C0;
    if degree < 1 {
        return b;
    }
    let (x, y, z) = (d.x, d.y, d.z);
    b[1] = -SH_C1 * y;
    b[2] = SH_C1 * z;
    b[3] = -SH_C1 * x;
    if degree < 2 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = SH_C2[0] * xy;
    b[5] = SH_C2[1] * yz;
    b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    b[7] = SH_C2[3] * xz;
    b[8] = SH_C2[4] * (xx - yy);
    if degree < 3 {
        return b;
    }
    b[9] = SH_C3[0] * y * (3.0 * xx - yy);
    b[10] = SH_C3[1] * xy * z;
    b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = SH_C3[5] * z * (xx - yy);
    b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    b
}

/// Basis values together with their gradients w.r.t. the direction
/// components. Needed when the view direction itself depends on optimizable
/// parameters (camera color: direction = normalize(center − camera)).
pub fn sh_basis_grad(degree: usize, d: DVec3) -> ([f64; SH_COEFFS], [DVec3; SH_COEFFS]) {
    debug_assert!(degree <= SH_MAX_DEGREE);
    let b = sh_basis(degree, d);
    let mut g = [DVec3::ZERO; SH_COEFFS];
    if degree < 1 {
        return (b, g);
    }
    let (x, y, z) = (d.x, d.y, d.z);
    g[1] = DVec3::new(0.0, -SH_C1, 0.0);
    g[2] = DVec3::new(0.0, 0.0, SH_C1);
    g[3] = DVec3::new(-SH_C1, 0.0, 0.0);
    if degree < 2 {
        return (b, g);
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    g[4] = SH_C2[0] * DVec3::new(y, x, 0.0);
    g[5] = SH_C2[1] * DVec3::new(0.0, z, y);
    g[6] = SH_C2[2] * DVec3::new(-2.0 * x, -2.0 * y, 4.0 * z);
    g[7] = SH_C2[3] * DVec3::new(z, 0.0, x);
    g[8] = SH_C2[4] * DVec3::new(2.0 * x, -2.0 * y, 0.0);
    if degree < 3 {
        return (b, g);
    }
    g[9] = SH_C3[0] * DVec3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
    g[10] = SH_C3[1] * DVec3::new(y * z, x * z, x * y);
    g[11] = SH_C3[2] * DVec3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    g[12] = SH_C3[3] * DVec3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    g[13] = SH_C3[4] * DVec3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    g[14] = SH_C3[5] * DVec3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
    g[15] = SH_C3[6] * DVec3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
    (b, g)
}

fn check_sh_inputs(degree: usize, dir: DVec3) -> Result<()> {
    if degree > SH_MAX_DEGREE {
        return Err(Error::UnsupportedDegree(degree));
    }
    if (dir.length() - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "SH direction must be unit length, got |d| = {}",
            dir.length()
        )));
    }
    Ok(())
}

/// Raw (pre-nonlinearity) SH projection of a scalar coefficient block.
pub fn eval_sh_linear(coeffs: &[f64; SH_COEFFS], degree: usize, dir: DVec3) -> Result<f64> {
    check_sh_inputs(degree, dir)?;
    let b = sh_basis(degree, dir);
    let n = sh_coeff_count(degree);
    Ok((0..n).map(|i| b[i] * coeffs[i]).sum())
}

/// Decoded color: SH projection per channel, offset by +0.5, clamped to [0,1].
pub fn eval_sh_color(coeffs: &[DVec3; SH_COEFFS], degree: usize, dir: DVec3) -> Result<DVec3> {
    check_sh_inputs(degree, dir)?;
    let b = sh_basis(degree, dir);
    let n = sh_coeff_count(degree);
    let mut acc = DVec3::ZERO;
    for i in 0..n {
        acc += coeffs[i] * b[i];
    }
    Ok((acc + DVec3::splat(0.5)).clamp(DVec3::ZERO, DVec3::ONE))
}

/// Decoded scalar channel (intensity / ray-drop): sigmoid of the projection.
pub fn eval_sh_sigmoid(coeffs: &[f64; SH_COEFFS], degree: usize, dir: DVec3) -> Result<f64> {
    Ok(sigmoid(eval_sh_linear(coeffs, degree, dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit(rng: &mut StdRng) -> DVec3 {
        loop {
            let v = DVec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let l = v.length();
            if l > 1e-3 && l < 1.0 {
                return v / l;
            }
        }
    }

    #[test]
    fn kernel_known_values() {
        assert_eq!(gaussian_value(0.0, 0.0), 1.0);
        assert_relative_eq!(gaussian_value(1.0, 0.0), 0.6065306597126334, epsilon = 1e-15);
        assert_relative_eq!(gaussian_value(3.0, 4.0), 3.726653172078671e-6, epsilon = 1e-18);
    }

    #[test]
    fn kernel_monotone_in_radius() {
        let mut prev = 1.0;
        for i in 1..50 {
            let r = i as f64 * 0.1;
            let g = gaussian_value(r, 0.0);
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn degree0_color_is_constant_offset() {
        let mut coeffs = [DVec3::ZERO; SH_COEFFS];
        coeffs[0] = DVec3::new(1.0, 0.0, -0.5);
        let a = eval_sh_color(&coeffs, 0, DVec3::Z).unwrap();
        let b = eval_sh_color(&coeffs, 0, DVec3::X).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(a.x, 1.0 * 0.28209479177387814 + 0.5, epsilon = 1e-12);
        assert_relative_eq!(a.y, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn y10_flips_sign_with_z() {
        // slot 2 carries the C1·z basis function
        let mut coeffs = [0.0; SH_COEFFS];
        coeffs[2] = 1.0;
        let up = eval_sh_linear(&coeffs, 1, DVec3::Z).unwrap();
        let down = eval_sh_linear(&coeffs, 1, -DVec3::Z).unwrap();
        assert_relative_eq!(up, 0.4886025119029199, epsilon = 1e-12);
        assert_relative_eq!(down, -up, epsilon = 1e-12);
    }

    #[test]
    fn eval_sh_rejects_bad_inputs() {
        let coeffs = [0.0; SH_COEFFS];
        assert!(eval_sh_linear(&coeffs, 4, DVec3::Z).is_err());
        assert!(eval_sh_linear(&coeffs, 1, DVec3::new(0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn sh_is_linear_in_coefficients() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let d = unit(&mut rng);
            let mut c1 = [0.0; SH_COEFFS];
            let mut c2 = [0.0; SH_COEFFS];
            let mut mix = [0.0; SH_COEFFS];
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            for i in 0..SH_COEFFS {
                c1[i] = rng.gen_range(-1.0..1.0);
                c2[i] = rng.gen_range(-1.0..1.0);
                mix[i] = a * c1[i] + b * c2[i];
            }
            let lhs = eval_sh_linear(&mix, 3, d).unwrap();
            let rhs = a * eval_sh_linear(&c1, 3, d).unwrap() + b * eval_sh_linear(&c2, 3, d).unwrap();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..10 {
            // The basis functions are polynomials on R³, so we can probe
            // off-sphere points too.
            let d = DVec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let (_, grad) = sh_basis_grad(3, d);
            for axis in 0..3 {
                let mut dp = d;
                let mut dm = d;
                dp[axis] += h;
                dm[axis] -= h;
                let bp = sh_basis(3, dp);
                let bm = sh_basis(3, dm);
                for i in 0..SH_COEFFS {
                    let fd = (bp[i] - bm[i]) / (2.0 * h);
                    let an = grad[i][axis];
                    assert!(
                        (fd - an).abs() <= 1e-6 + 1e-6 * fd.abs().max(an.abs()),
                        "slot {i} axis {axis}: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn activation_examples() {
        let mut g = Gaussian2D::from_activated(
            DVec3::ZERO,
            DVec3::X,
            DVec3::Y,
            1.0,
            1.0,
            0.5,
        );
        let a = g.activate();
        assert_relative_eq!(a.scale_u, 1.0, epsilon = 1e-12);
        assert_relative_eq!(a.alpha, 0.5, epsilon = 1e-12);
        g.opacity_logit = 4.0;
        assert_relative_eq!(g.activate().alpha, 0.9820137900379085, epsilon = 1e-12);
        g.log_scale_u = 0.0;
        assert_relative_eq!(g.activate().scale_u, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normal_examples() {
        let g = Gaussian2D::from_activated(DVec3::ZERO, DVec3::X, DVec3::Y, 1.0, 1.0, 0.5);
        assert_eq!(g.normal().unwrap(), DVec3::Z);
        let flipped = Gaussian2D::from_activated(DVec3::ZERO, DVec3::Y, DVec3::X, 1.0, 1.0, 0.5);
        assert_eq!(flipped.normal().unwrap(), -DVec3::Z);
        // facing flip: sensor looks along +z, normal must oppose it
        assert_eq!(g.normal_toward(DVec3::Z).unwrap(), -DVec3::Z);
    }

    #[test]
    fn normal_orthogonal_to_tangents() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let u = unit(&mut rng);
            let v0 = unit(&mut rng);
            let v = (v0 - u * v0.dot(u)).normalize();
            let g = Gaussian2D::from_activated(DVec3::ZERO, u, v, 0.5, 0.5, 0.5);
            let n = g.normal().unwrap();
            assert!(n.dot(u).abs() < 1e-6);
            assert!(n.dot(v).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_tangents_rejected() {
        let g = Gaussian2D::from_activated(DVec3::ZERO, DVec3::X, DVec3::X, 1.0, 1.0, 0.5);
        assert!(g.normal().is_err());
    }

    #[test]
    fn base_value_setters_roundtrip() {
        let mut g = Gaussian2D::from_activated(DVec3::ZERO, DVec3::X, DVec3::Y, 1.0, 1.0, 0.5);
        g.set_base_color(DVec3::new(0.8, 0.3, 0.5));
        g.set_base_intensity(0.7);
        g.set_base_raydrop(0.1);
        let c = eval_sh_color(&g.sh_color, 0, DVec3::Z).unwrap();
        assert_relative_eq!(c.x, 0.8, epsilon = 1e-12);
        assert_relative_eq!(c.y, 0.3, epsilon = 1e-12);
        let i = eval_sh_sigmoid(&g.sh_intensity, 0, DVec3::Z).unwrap();
        assert_relative_eq!(i, 0.7, epsilon = 1e-12);
        let r = eval_sh_sigmoid(&g.sh_raydrop, 0, DVec3::Z).unwrap();
        assert_relative_eq!(r, 0.1, epsilon = 1e-12);
    }
}
