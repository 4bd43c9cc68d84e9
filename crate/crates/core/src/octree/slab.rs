//! Ray versus axis-aligned box (slab method).

use crate::error::{Result, SalfError};
use crate::math::Vec3;

/// Parametric interval `[t_near, t_far]` over which `origin + t dir` lies in
/// the box, or `None` if the line misses it. Zero direction components are
/// handled per axis: the ray is inside that slab for all t or never.
#[inline]
pub fn ray_box_interval(
    origin: &Vec3,
    dir: &Vec3,
    box_min: &Vec3,
    box_max: &Vec3,
) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        let d = dir[k];
        if d == 0.0 {
            if origin[k] < box_min[k] || origin[k] > box_max[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (a, b) = {
            let ta = (box_min[k] - origin[k]) * inv;
            let tb = (box_max[k] - origin[k]) * inv;
            if ta <= tb {
                (ta, tb)
            } else {
                (tb, ta)
            }
        };
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Distance from `pos` (inside or on the box) to where the ray leaves it.
pub fn ray_box_exit(pos: &Vec3, dir: &Vec3, box_min: &Vec3, box_max: &Vec3) -> Result<f64> {
    let scale = (box_max - box_min).max().max(1.0);
    let tol = 1e-9 * scale;
    if (0..3).any(|k| pos[k] < box_min[k] - tol || pos[k] > box_max[k] + tol) {
        return Err(SalfError::PointOutsideBox([pos.x, pos.y, pos.z]));
    }
    let mut t = f64::INFINITY;
    for k in 0..3 {
        let d = dir[k];
        let tk = if d > 0.0 {
            (box_max[k] - pos[k]) / d
        } else if d < 0.0 {
            (box_min[k] - pos[k]) / d
        } else {
            f64::INFINITY
        };
        t = t.min(tk);
    }
    Ok(t.max(0.0))
}
