//! Per-point evaluation of the local linear fields shared by both renderers
//! and by the trainer.

use crate::error::{Result, SalfError};
use crate::math::Vec3;

use super::{DensityMode, VoxelGeom, VoxelParams};

/// Real SH normalization for band 0.
pub const SH_C0: f64 = 0.282_094_791_8;
/// Real SH normalization for band 1.
pub const SH_C1: f64 = 0.488_602_511_9;

/// Upper clamp on per-segment opacity.
pub const MAX_ALPHA: f64 = 0.9999;

/// Maps a world point to the voxel's normalized coordinates (`[-1, 1]^3`
/// inside the cube).
pub fn world_to_local(p_world: &Vec3, voxel: &VoxelGeom) -> Vec3 {
    voxel
        .rotation
        .inverse_transform_vector(&(p_world - voxel.center))
        * (2.0 / voxel.edge)
}

pub fn local_to_world(x: &Vec3, voxel: &VoxelGeom) -> Vec3 {
    voxel.rotation * (x * (0.5 * voxel.edge)) + voxel.center
}

pub fn eval_sdf(x: &Vec3, params: &VoxelParams) -> f64 {
    let w = &params.w_s;
    w[0] * x.x + w[1] * x.y + w[2] * x.z + w[3]
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Density grows with the signed distance: `a/2 + a/2 sign(s) (1 - e^{-|s|/b})`.
pub fn sdf_to_density(s_pm: f64, a: f64, b: f64) -> f64 {
    0.5 * a + 0.5 * a * sign0(s_pm) * (1.0 - (-s_pm.abs() / b).exp())
}

/// Partial derivatives of [`sdf_to_density`] with respect to `s`, `ln a` and
/// `ln b`. The derivative in `s` is taken as 0 exactly at `s = 0`.
pub fn sdf_to_density_grads(s_pm: f64, a: f64, b: f64) -> (f64, f64, f64) {
    let sigma = sdf_to_density(s_pm, a, b);
    if s_pm == 0.0 {
        return (0.0, sigma, 0.0);
    }
    let e = (-s_pm.abs() / b).exp();
    let d_s = 0.5 * a / b * e;
    let d_log_a = sigma;
    let d_log_b = -0.5 * a * sign0(s_pm) * e * s_pm.abs() / b;
    (d_s, d_log_a, d_log_b)
}

pub fn eval_density(x: &Vec3, params: &VoxelParams, mode: DensityMode) -> f64 {
    let s = eval_sdf(x, params);
    match mode {
        DensityMode::Sdf => sdf_to_density(s, params.a(), params.b()),
        DensityMode::Raw => s.exp(),
    }
}

/// Bands l = 0, 1 real spherical harmonics in the order DC, Y(1,-1), Y(1,0),
/// Y(1,1).
pub fn sh_basis(omega: &Vec3) -> Result<[f64; 4]> {
    if ((omega.norm_squared()) - 1.0).abs() > 2e-6 {
        return Err(SalfError::NonUnitDirection([omega.x, omega.y, omega.z]));
    }
    Ok(sh_basis_unchecked(omega))
}

#[inline]
pub(crate) fn sh_basis_unchecked(omega: &Vec3) -> [f64; 4] {
    [SH_C0, SH_C1 * omega.y, SH_C1 * omega.z, SH_C1 * omega.x]
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Color logits `W_c x + W_sh gamma` before the sigmoid.
fn color_logits(x: &Vec3, gamma: &[f64; 4], params: &VoxelParams) -> [f64; 3] {
    let mut z = [0.0; 3];
    for (k, zk) in z.iter_mut().enumerate() {
        let wc = &params.w_c[k];
        let ws = &params.w_sh[k];
        *zk = wc[0] * x.x
            + wc[1] * x.y
            + wc[2] * x.z
            + ws[0] * gamma[0]
            + ws[1] * gamma[1]
            + ws[2] * gamma[2]
            + ws[3] * gamma[3];
    }
    z
}

/// View-dependent color; `omega` must be unit length.
pub fn eval_color(x: &Vec3, omega: &Vec3, params: &VoxelParams) -> Vec3 {
    let gamma = sh_basis_unchecked(omega);
    let z = color_logits(x, &gamma, params);
    Vec3::new(sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2]))
}

/// `1 - exp(-sigma delta)`, clamped to [`MAX_ALPHA`].
pub fn segment_opacity(sigma: f64, delta: f64) -> f64 {
    (1.0 - (-sigma * delta).exp()).min(MAX_ALPHA)
}

/// Everything the renderers and the backward pass need at one sample point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSample {
    pub sdf: f64,
    pub sigma: f64,
    pub color: Vec3,
}

pub fn eval_point(x: &Vec3, omega: &Vec3, params: &VoxelParams, mode: DensityMode) -> PointSample {
    let sdf = eval_sdf(x, params);
    let sigma = match mode {
        DensityMode::Sdf => sdf_to_density(sdf, params.a(), params.b()),
        DensityMode::Raw => sdf.exp(),
    };
    PointSample {
        sdf,
        sigma,
        color: eval_color(x, omega, params),
    }
}

/// Accumulates `dL/dsigma` at local point `x` into the geometry gradient.
pub(crate) fn backprop_density(
    x: &Vec3,
    sdf: f64,
    sigma: f64,
    d_sigma: f64,
    params: &VoxelParams,
    mode: DensityMode,
    grad: &mut VoxelParams,
) {
    if d_sigma == 0.0 {
        return;
    }
    let d_s = match mode {
        DensityMode::Sdf => {
            let (ds, dla, dlb) = sdf_to_density_grads(sdf, params.a(), params.b());
            grad.log_a += d_sigma * dla;
            grad.log_b += d_sigma * dlb;
            d_sigma * ds
        }
        DensityMode::Raw => d_sigma * sigma,
    };
    grad.w_s[0] += d_s * x.x;
    grad.w_s[1] += d_s * x.y;
    grad.w_s[2] += d_s * x.z;
    grad.w_s[3] += d_s;
}

/// Accumulates `dL/dc` at local point `x`, view `omega`, into the color
/// gradient. `color` is the forward output.
pub(crate) fn backprop_color(
    x: &Vec3,
    omega: &Vec3,
    color: &Vec3,
    d_color: &Vec3,
    grad: &mut VoxelParams,
) {
    let gamma = sh_basis_unchecked(omega);
    for k in 0..3 {
        let dz = d_color[k] * color[k] * (1.0 - color[k]);
        if dz == 0.0 {
            continue;
        }
        grad.w_c[k][0] += dz * x.x;
        grad.w_c[k][1] += dz * x.y;
        grad.w_c[k][2] += dz * x.z;
        for j in 0..4 {
            grad.w_sh[k][j] += dz * gamma[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Quat;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(center: Vec3, edge: f64, rotation: Quat) -> VoxelGeom {
        VoxelGeom {
            level: 0,
            ijk: [0; 3],
            center,
            edge,
            rotation,
        }
    }

    fn params_with_ws(w_s: [f64; 4]) -> VoxelParams {
        VoxelParams {
            w_s,
            ..VoxelParams::zeros()
        }
    }

    #[test]
    fn local_coordinates_of_center_and_face() {
        let g = geom(Vec3::new(1.0, 2.0, 3.0), 0.5, Quat::identity());
        assert_eq!(world_to_local(&g.center, &g), Vec3::zeros());
        let face = g.center + Vec3::new(0.25, 0.0, 0.0);
        assert!((world_to_local(&face, &g) - Vec3::x()).norm() < 1e-15);
    }

    #[test]
    fn local_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let rot = Quat::from_euler_angles(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            );
            let g = geom(
                Vec3::new(
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-5.0..5.0),
                ),
                rng.gen_range(0.01..4.0),
                rot,
            );
            let local = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let p = local_to_world(&local, &g);
            let back = world_to_local(&p, &g);
            assert!((back - local).norm() < 1e-12, "{back:?} vs {local:?}");
            let p2 = local_to_world(&back, &g);
            assert!((p2 - p).norm() <= 1e-12 * p.norm().max(1.0));
        }
    }

    #[test]
    fn sdf_examples() {
        let x = Vec3::new(0.3, -0.9, 0.1);
        assert_eq!(eval_sdf(&x, &params_with_ws([0.0, 0.0, 0.0, 0.7])), 0.7);
        assert_eq!(
            eval_sdf(
                &Vec3::new(0.5, 0.2, -0.4),
                &params_with_ws([1.0, 0.0, 0.0, 0.0])
            ),
            0.5
        );
        assert_eq!(
            eval_sdf(&Vec3::x(), &params_with_ws([1.0, 1.0, 1.0, -1.0])),
            0.0
        );
    }

    #[test]
    fn density_transform_examples() {
        assert_eq!(sdf_to_density(0.0, 2.0, 0.2), 1.0);
        assert!((sdf_to_density(1e6, 2.0, 0.2) - 2.0).abs() < 1e-12);
        assert!(sdf_to_density(-1e6, 2.0, 0.2).abs() < 1e-12);
        let s = 0.2 * 2f64.ln();
        assert!((sdf_to_density(s, 2.0, 0.2) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn raw_density_examples() {
        let x = Vec3::new(0.2, 0.4, -0.6);
        assert_eq!(
            eval_density(&x, &VoxelParams::zeros(), DensityMode::Raw),
            1.0
        );
        let p = params_with_ws([0.0, 0.0, 0.0, 2f64.ln()]);
        assert!((eval_density(&x, &p, DensityMode::Raw) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sdf_density_is_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (a, b) = (rng.gen_range(0.05..50.0), rng.gen_range(0.01..1.0));
            let p = VoxelParams::random(&mut rng, a, b);
            let x = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let direct = eval_density(&x, &p, DensityMode::Sdf);
            let composed = sdf_to_density(eval_sdf(&x, &p), p.a(), p.b());
            assert_eq!(direct, composed);
        }
    }

    #[test]
    fn sh_examples() {
        let g = sh_basis(&Vec3::z()).unwrap();
        assert_eq!(g, [0.2820947918, 0.0, 0.4886025119, 0.0]);
        let g = sh_basis(&Vec3::x()).unwrap();
        assert_eq!(g, [0.2820947918, 0.0, 0.0, 0.4886025119]);
        assert!(sh_basis(&Vec3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn color_examples() {
        let x = Vec3::new(0.1, 0.5, -0.3);
        let c = eval_color(&x, &Vec3::z(), &VoxelParams::zeros());
        assert_eq!(c, Vec3::repeat(0.5));

        let k = [0.7, -1.2, 2.0];
        let mut p = VoxelParams::zeros();
        for ch in 0..3 {
            p.w_sh[ch][0] = k[ch] / SH_C0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let omega = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let c = eval_color(&x, &omega, &p);
            for ch in 0..3 {
                assert!((c[ch] - sigmoid(k[ch])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn color_view_independent_without_sh() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = VoxelParams::random(&mut rng, 2.0, 0.2);
        p.w_sh = [[0.0; 4]; 3];
        let x = Vec3::new(0.3, -0.2, 0.9);
        let reference = eval_color(&x, &Vec3::z(), &p);
        for _ in 0..100 {
            let omega = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            assert_eq!(eval_color(&x, &omega, &p), reference);
        }
    }

    #[test]
    fn opacity_examples() {
        assert_eq!(segment_opacity(0.0, 3.0), 0.0);
        assert_eq!(segment_opacity(5.0, 0.0), 0.0);
        assert!((segment_opacity(2f64.ln(), 1.0) - 0.5).abs() < 1e-15);
        let sat = segment_opacity(100.0, 1.0);
        assert!(sat < 1.0 && sat > 0.999);
    }

    #[test]
    fn density_grads_match_finite_differences() {
        for &(s, a, b) in &[(0.3, 2.0, 0.2), (-0.7, 0.4, 0.5), (1e-3, 5.0, 0.05)] {
            let (ds, dla, dlb) = sdf_to_density_grads(s, a, b);
            let h = 1e-6;
            let f = |s: f64, la: f64, lb: f64| sdf_to_density(s, la.exp(), lb.exp());
            let (la, lb) = (a.ln(), b.ln());
            let fd_s = (f(s + h, la, lb) - f(s - h, la, lb)) / (2.0 * h);
            let fd_a = (f(s, la + h, lb) - f(s, la - h, lb)) / (2.0 * h);
            let fd_b = (f(s, la, lb + h) - f(s, la, lb - h)) / (2.0 * h);
            assert!((ds - fd_s).abs() < 1e-6 * fd_s.abs().max(1.0));
            assert!((dla - fd_a).abs() < 1e-6 * fd_a.abs().max(1.0));
            assert!((dlb - fd_b).abs() < 1e-6 * fd_b.abs().max(1.0));
        }
        assert_eq!(sdf_to_density_grads(0.0, 2.0, 0.2).0, 0.0);
    }

    proptest! {
        #[test]
        fn density_non_negative_and_bounded(
            w in proptest::array::uniform4(-20.0f64..20.0),
            la in -5.0f64..5.0, lb in -5.0f64..2.0,
            x in proptest::array::uniform3(-1.0f64..1.0),
        ) {
            let p = VoxelParams { w_s: w, log_a: la, log_b: lb, ..VoxelParams::zeros() };
            let x = Vec3::new(x[0], x[1], x[2]);
            let sdf = eval_density(&x, &p, DensityMode::Sdf);
            prop_assert!(sdf >= 0.0 && sdf <= p.a() * (1.0 + 1e-12));
            prop_assert!(eval_density(&x, &p, DensityMode::Raw) >= 0.0);
        }

        #[test]
        fn density_monotone_in_sdf(s1 in -5.0f64..5.0, s2 in -5.0f64..5.0, a in 0.01f64..10.0, b in 0.01f64..2.0) {
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(sdf_to_density(lo, a, b) <= sdf_to_density(hi, a, b));
        }

        #[test]
        fn density_continuous_at_zero(a in 0.01f64..10.0, b in 0.01f64..2.0) {
            let eps = 1e-12;
            prop_assert!((sdf_to_density(eps, a, b) - 0.5 * a).abs() < 1e-9);
            prop_assert!((sdf_to_density(-eps, a, b) - 0.5 * a).abs() < 1e-9);
        }

        #[test]
        fn color_in_open_unit_cube(
            wc in proptest::array::uniform9(-3.0f64..3.0),
            ws in proptest::array::uniform12(-3.0f64..3.0),
            x in proptest::array::uniform3(-1.0f64..1.0),
            d in proptest::array::uniform3(-1.0f64..1.0),
        ) {
            let dir = Vec3::new(d[0], d[1], d[2]);
            prop_assume!(dir.norm() > 1e-3);
            let mut flat = [0.0; 27];
            flat[4..13].copy_from_slice(&wc);
            flat[13..25].copy_from_slice(&ws);
            let p = VoxelParams::from_flat(&flat);
            let c = eval_color(&Vec3::new(x[0], x[1], x[2]), &dir.normalize(), &p);
            for k in 0..3 {
                prop_assert!(c[k] > 0.0 && c[k] < 1.0);
            }
        }
    }
}
