//! Primitive initialization from a point cloud: one disk per point, sized
//! by local point spacing, with neutral opacity and view-independent
//! color/intensity seeds.

use glam::DVec3;

use crate::error::{Error, Result};
use crate::math::any_orthonormal_frame;
use crate::metrics::VoxelGrid;
use crate::model::Gaussian2D;

/// Build one primitive per point. Scales come from the mean distance to
/// the 3 nearest neighbors; the tangent frame is an arbitrary orthonormal
/// pair; opacity starts at 0.5 (logit 0). Degree-0 spherical-harmonic
/// terms reproduce the given colors/intensities, higher orders stay zero.
pub fn init_from_points(
    points: &[DVec3],
    colors: Option<&[DVec3]>,
    intensities: Option<&[f64]>,
) -> Result<Vec<Gaussian2D>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("point cloud initialization needs points".into()));
    }
    if let Some(c) = colors {
        if c.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} colors for {} points",
                c.len(),
                points.len()
            )));
        }
    }
    if let Some(i) = intensities {
        if i.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} intensities for {} points",
                i.len(),
                points.len()
            )));
        }
    }
    let grid = if points.len() > 1 {
        Some(VoxelGrid::build_adaptive(points)?)
    } else {
        None
    };
    let (tangent_u, tangent_v) = any_orthonormal_frame(DVec3::Z);
    let mut out = Vec::with_capacity(points.len());
    for (i, &p) in points.iter().enumerate() {
        let scale = match &grid {
            Some(g) => {
                let nn = g.k_nearest(p, 3, Some(i));
                let mean = nn.iter().map(|x| x.1).sum::<f64>() / nn.len() as f64;
                mean.max(1e-6) // duplicate points would give a zero scale
            }
            None => 0.1,
        };
        let mut splat = Gaussian2D::from_activated(p, tangent_u, tangent_v, scale, scale, 0.5);
        if let Some(c) = colors {
            splat.set_base_color(c[i]);
        }
        if let Some(ints) = intensities {
            splat.set_base_intensity(ints[i].clamp(1e-4, 1.0 - 1e-4));
        }
        out.push(splat);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sigmoid;
    use crate::model::{sh_basis, SH_COEFFS};
    use approx::assert_relative_eq;

    #[test]
    fn single_point_becomes_a_primitive_there() {
        let prims = init_from_points(&[DVec3::new(1.0, 2.0, 3.0)], None, None).unwrap();
        assert_eq!(prims.len(), 1);
        assert_eq!(prims[0].center, DVec3::new(1.0, 2.0, 3.0));
        assert_eq!(prims[0].opacity_logit, 0.0);
        let u = prims[0].tangent_u;
        let v = prims[0].tangent_v;
        assert_relative_eq!(u.length(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(v.length(), 1.0, epsilon = 1e-12);
        assert!(u.dot(v).abs() < 1e-12);
    }

    #[test]
    fn grid_spacing_sets_the_scales() {
        let h = 0.2;
        let mut pts = Vec::new();
        for y in 0..7 {
            for x in 0..7 {
                pts.push(DVec3::new(x as f64 * h, y as f64 * h, 0.0));
            }
        }
        let prims = init_from_points(&pts, None, None).unwrap();
        // interior point: the three nearest neighbors all sit one spacing away
        let center = 3 * 7 + 3;
        let a = prims[center].activate();
        assert_relative_eq!(a.scale_u, h, epsilon = 1e-12);
        assert_relative_eq!(a.scale_v, h, epsilon = 1e-12);
    }

    #[test]
    fn seeds_invert_color_and_intensity() {
        let pts = vec![DVec3::ZERO, DVec3::X];
        let colors = vec![DVec3::new(0.8, 0.2, 0.4); 2];
        let ints = vec![0.3, 0.7];
        let prims = init_from_points(&pts, Some(&colors), Some(&ints)).unwrap();
        for (i, p) in prims.iter().enumerate() {
            // view-independent decode at any direction: basis[0]·c0 + 0.5
            let basis = sh_basis(0, DVec3::Z);
            let rgb = p.sh_color[0] * basis[0] + DVec3::splat(0.5);
            assert_relative_eq!(rgb.x, colors[i].x, epsilon = 1e-12);
            assert_relative_eq!(rgb.y, colors[i].y, epsilon = 1e-12);
            assert_relative_eq!(rgb.z, colors[i].z, epsilon = 1e-12);
            let decoded = sigmoid(p.sh_intensity[0] * basis[0]);
            assert_relative_eq!(decoded, ints[i], epsilon = 1e-12);
            for k in 1..SH_COEFFS {
                assert_eq!(p.sh_color[k], DVec3::ZERO);
                assert_eq!(p.sh_intensity[k], 0.0);
            }
        }
    }

    #[test]
    fn empty_input_errors() {
        assert!(init_from_points(&[], None, None).is_err());
    }
}
