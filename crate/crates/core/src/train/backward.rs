//! Reverse-mode gradients through front-to-back compositing.
//!
//! For a record with segments `i = 1..N`, transmittances `T_i` and the
//! suffix radiance `R_i` (what the ray sees after segment `i`, ending in the
//! background), `dC/dalpha_i = T_i (c_i - R_i)` and `dC/dc_i = T_i alpha_i`.
//! Expected depth `D = A / W` is differentiated the same way with `A` the
//! weighted sum of midpoints and `W` the weight sum.

use crate::error::{Result, SalfError};
use crate::math::Vec3;
use crate::render::ray::voxel_set;
use crate::render::{RenderRecord, DEPTH_MIN_WEIGHT};
use crate::scene::field::{backprop_color, backprop_density};
use crate::scene::{Scene, MAX_ALPHA};

use super::ParamGrads;

/// Loss gradient with respect to one ray's rendered outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayLossGrad {
    pub d_color: Vec3,
    /// Gradient with respect to expected depth; ignored when the record has
    /// no depth return.
    pub d_depth: f64,
}

/// `d alpha / d sigma` for `alpha = min(1 - exp(-sigma delta), MAX_ALPHA)`.
fn alpha_sigma_grad(alpha: f64, delta: f64) -> f64 {
    if alpha >= MAX_ALPHA {
        0.0
    } else {
        delta * (1.0 - alpha)
    }
}

/// Accumulates the parameter gradients of one ray into `grads`.
pub fn backward_ray(
    scene: &Scene,
    record: &RenderRecord,
    g: &RayLossGrad,
    grads: &mut ParamGrads,
) -> Result<()> {
    if !record.has_segments() {
        return Err(SalfError::MissingRecords(
            "render record was produced without segment retention".into(),
        ));
    }
    let segs = &record.segments;
    let depth_active = g.d_depth != 0.0 && record.weight_sum > DEPTH_MIN_WEIGHT;
    let (inv_w, depth) = if depth_active {
        (
            1.0 / record.weight_sum,
            record.depth_sum / record.weight_sum,
        )
    } else {
        (0.0, 0.0)
    };
    let mut suffix_c = record.background;
    let mut suffix_a = 0.0;
    let mut suffix_w = 0.0;
    for s in segs.iter().rev() {
        let t = s.transmittance;
        let t_mid = s.t_mid();
        let mut d_alpha = t * g.d_color.dot(&(s.color - suffix_c));
        if depth_active {
            let da = t * (t_mid - suffix_a);
            let dw = t * (1.0 - suffix_w);
            d_alpha += g.d_depth * (da - depth * dw) * inv_w;
        }
        let d_c = g.d_color * (t * s.alpha);
        suffix_c = s.color * s.alpha + suffix_c * (1.0 - s.alpha);
        suffix_a = t_mid * s.alpha + suffix_a * (1.0 - s.alpha);
        suffix_w = s.alpha + suffix_w * (1.0 - s.alpha);

        let idx = s.voxel as usize;
        let params = voxel_set(scene, s.owner).param(idx);
        let grad = grads.get_mut(s.owner, idx);
        let d_sigma = d_alpha * alpha_sigma_grad(s.alpha, s.delta());
        backprop_density(
            &s.local,
            s.sdf,
            s.sigma,
            d_sigma,
            params,
            scene.density_mode,
            grad,
        );
        backprop_color(&s.local, &s.omega, &s.color, &d_c, grad);
    }
    Ok(())
}

/// Gradients of a batch, summed in record order so the result does not
/// depend on how the forward pass was scheduled.
pub fn backward(
    scene: &Scene,
    records: &[RenderRecord],
    loss_grads: &[RayLossGrad],
) -> Result<ParamGrads> {
    if records.len() != loss_grads.len() {
        return Err(SalfError::ShapeMismatch(format!(
            "{} records but {} loss gradients",
            records.len(),
            loss_grads.len()
        )));
    }
    let mut grads = ParamGrads::zeros_like(scene);
    for (r, g) in records.iter().zip(loss_grads) {
        backward_ray(scene, r, g, &mut grads)?;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::ray::{integrate_ray, RenderOptions, SceneOctrees};
    use crate::scene::{SceneBounds, VoxelParams};
    use crate::sensors::Ray;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> Scene {
        let b = SceneBounds::new(Vec3::zeros(), Vec3::new(4.0, 2.0, 2.0), 1.0, 2).unwrap();
        let mut s = Scene::new(b, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..4 {
            s.voxels
                .insert(&b, 0, [i, 0, 0], VoxelParams::random(&mut rng, 2.0, 0.3))
                .unwrap();
        }
        s
    }

    #[test]
    fn missing_segments_is_an_error() {
        let s = scene();
        let trees = SceneOctrees::build(&s).unwrap();
        let ray = Ray::new(Vec3::new(-1.0, 0.5, 0.5), Vec3::x());
        let r = integrate_ray(&s, &trees, &ray, &RenderOptions::default()).unwrap();
        let mut g = ParamGrads::zeros_like(&s);
        let lg = RayLossGrad {
            d_color: Vec3::repeat(1.0),
            d_depth: 0.0,
        };
        assert!(matches!(
            backward_ray(&s, &r, &lg, &mut g),
            Err(SalfError::MissingRecords(_))
        ));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let s = scene();
        let trees = SceneOctrees::build(&s).unwrap();
        let ray = Ray::new(Vec3::new(-1.0, 0.5, 0.5), Vec3::x());
        let opts = RenderOptions {
            keep_segments: true,
            ..Default::default()
        };
        let r = integrate_ray(&s, &trees, &ray, &opts).unwrap();
        let g = backward(&s, &[r], &[RayLossGrad::default()]).unwrap();
        assert!(g
            .static_grads
            .iter()
            .all(|p| p.to_flat().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn background_only_ray_has_no_gradient() {
        let s = scene();
        let trees = SceneOctrees::build(&s).unwrap();
        let ray = Ray::new(Vec3::new(-1.0, 1.5, 0.5), Vec3::x());
        let opts = RenderOptions {
            keep_segments: true,
            ..Default::default()
        };
        let r = integrate_ray(&s, &trees, &ray, &opts).unwrap();
        assert!(r.segments.is_empty());
        let lg = RayLossGrad {
            d_color: Vec3::repeat(1.0),
            d_depth: 1.0,
        };
        let g = backward(&s, &[r], &[lg]).unwrap();
        assert!(g
            .static_grads
            .iter()
            .all(|p| p.to_flat().iter().all(|v| *v == 0.0)));
    }
}
