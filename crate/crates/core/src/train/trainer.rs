use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SalfError};
use crate::math::Vec3;
use crate::render::ray::{integrate_rays, RenderOptions, SceneOctrees};
use crate::render::TERMINATION_OPACITY;
use crate::scene::Scene;
use crate::sensors::{camera_rays, gen_lidar_rays, CameraModel, LidarModel, Ray};

use super::adam::{adam_step, learning_rate, AdamConfig, OptimState};
use super::backward::backward_ray;
use super::densify::{densify_and_prune, DensifyConfig};
use super::loss::{
    combine_ray_grads, face_pairs, locate_points, loss_color, loss_depth, loss_eikonal, loss_empty,
    loss_opacity_lidar, loss_smooth, LossWeights,
};
use super::{ParamGrads, TrainBatch};

/// Every supervised ray of a dataset, pooled across sensors.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub camera_rays: Vec<Ray>,
    pub colors: Vec<Vec3>,
    pub camera_ids: Vec<usize>,
    pub lidar_rays: Vec<Ray>,
    pub ranges: Vec<Option<f64>>,
    cameras: usize,
}

impl TrainData {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one image (row-major colors) taken by `cam` at `t0`.
    pub fn add_camera(&mut self, cam: &CameraModel, t0: f64, image: &[Vec3]) -> Result<()> {
        let rays = camera_rays(cam, t0)?;
        if rays.len() != image.len() {
            return Err(SalfError::ShapeMismatch(format!(
                "{} pixels for a {}x{} camera",
                image.len(),
                cam.width,
                cam.height
            )));
        }
        let id = self.cameras;
        self.cameras += 1;
        for (r, c) in rays.into_iter().zip(image) {
            if r.valid {
                self.camera_rays.push(r);
                self.colors.push(*c);
                self.camera_ids.push(id);
            }
        }
        Ok(())
    }

    /// Adds one sweep of ranges in firing order.
    pub fn add_lidar(&mut self, lidar: &LidarModel, t0: f64, ranges: &[Option<f64>]) -> Result<()> {
        let rays = gen_lidar_rays(lidar, t0)?;
        if rays.len() != ranges.len() {
            return Err(SalfError::ShapeMismatch(format!(
                "{} ranges for {} LiDAR rays",
                ranges.len(),
                rays.len()
            )));
        }
        self.lidar_rays.extend(rays);
        self.ranges.extend_from_slice(ranges);
        Ok(())
    }

    /// World positions of every LiDAR return.
    pub fn lidar_points(&self) -> Vec<Vec3> {
        self.lidar_rays
            .iter()
            .zip(&self.ranges)
            .filter_map(|(r, d)| d.map(|d| r.at(d)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        TrainBatch {
            camera_rays: self.camera_rays.clone(),
            colors: self.colors.clone(),
            lidar_rays: self.lidar_rays.clone(),
            ranges: self.ranges.clone(),
            camera_ids: self.camera_ids.clone(),
        }
        .validate()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, cameras: usize, lidar: usize) -> TrainBatch {
        let mut b = TrainBatch::default();
        if !self.camera_rays.is_empty() {
            for _ in 0..cameras {
                let i = rng.gen_range(0..self.camera_rays.len());
                b.camera_rays.push(self.camera_rays[i]);
                b.colors.push(self.colors[i]);
                b.camera_ids.push(self.camera_ids[i]);
            }
        }
        if !self.lidar_rays.is_empty() {
            for _ in 0..lidar {
                let i = rng.gen_range(0..self.lidar_rays.len());
                b.lidar_rays.push(self.lidar_rays[i]);
                b.ranges.push(self.ranges[i]);
            }
        }
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub camera_batch: usize,
    pub lidar_batch: usize,
    /// Voxels, face pairs or points drawn per regularizer per step;
    /// defaults to the camera batch size.
    pub reg_samples: Option<usize>,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub densify: DensifyConfig,
    pub densify_enabled: bool,
    pub background: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3200,
            camera_batch: 4096,
            lidar_batch: 1024,
            reg_samples: None,
            seed: 0,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            densify: DensifyConfig::default(),
            densify_enabled: true,
            background: [0.0; 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.weights.is_valid() {
            return Err(SalfError::InvalidConfig(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        self.adam.validate()?;
        self.densify.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub color: f64,
    pub depth: f64,
    pub eikonal: f64,
    pub smooth: f64,
    pub opacity: f64,
    pub empty: f64,
    pub voxels: usize,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densify: Option<super::DensifyReport>,
}

/// Per-round caches that depend on the static voxel layout.
struct Layout {
    octrees: SceneOctrees,
    pairs: Vec<super::FacePair>,
    outer: Vec<usize>,
    points: Vec<(usize, Vec3)>,
    grad_norms: Vec<f64>,
}

impl Layout {
    fn build(scene: &Scene, world_points: &[Vec3]) -> Result<Self> {
        Ok(Self {
            octrees: SceneOctrees::build(scene)?,
            pairs: face_pairs(&scene.voxels),
            outer: (0..scene.voxels.len())
                .filter(|&i| scene.is_outer(scene.voxels.geom(i)))
                .collect(),
            points: locate_points(&scene.voxels, &scene.bounds, world_points),
            grad_norms: vec![0.0; scene.voxels.len()],
        })
    }
}

fn draw<T: Copy>(rng: &mut ChaCha8Rng, pool: &[T], n: usize) -> Vec<T> {
    if pool.is_empty() {
        return Vec::new();
    }
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}

/// [`train_loop_with`] without a per-step hook.
pub fn train_loop(
    scene: Scene,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<(Scene, Vec<StepLog>)> {
    train_loop_with(scene, data, cfg, |_, _| Ok(()))
}

/// Optimizes `scene` against `data`. `hook` sees every step's log and the
/// updated scene, e.g. to write checkpoints.
pub fn train_loop_with<F>(
    mut scene: Scene,
    data: &TrainData,
    cfg: &TrainConfig,
    mut hook: F,
) -> Result<(Scene, Vec<StepLog>)>
where
    F: FnMut(&StepLog, &Scene) -> Result<()>,
{
    cfg.validate()?;
    data.validate()?;
    let mut logs = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok((scene, logs));
    }
    let world_points = data.lidar_points();
    let mut layout = Layout::build(&scene, &world_points)?;
    let mut state = OptimState::new(&scene);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_reg = cfg.reg_samples.unwrap_or(cfg.camera_batch);
    let w = cfg.weights;
    let opts = RenderOptions {
        background: Vec3::from(cfg.background),
        termination: TERMINATION_OPACITY,
        t_max: f64::INFINITY,
        keep_segments: true,
    };

    for step in 0..cfg.steps {
        let batch = data.sample(&mut rng, cfg.camera_batch, cfg.lidar_batch);
        let cam_records = integrate_rays(&scene, &layout.octrees, &batch.camera_rays, &opts)?;
        let lidar_records = integrate_rays(&scene, &layout.octrees, &batch.lidar_rays, &opts)?;
        let (l_color, d_color) = loss_color(&cam_records, &batch.colors, w.color);
        let (l_depth, d_depth, _) = loss_depth(&lidar_records, &batch.ranges, w.depth);

        let mut grads = ParamGrads::zeros_like(&scene);
        for (r, g) in cam_records.iter().zip(combine_ray_grads(&d_color, &[])) {
            backward_ray(&scene, r, &g, &mut grads)?;
        }
        for (r, g) in lidar_records.iter().zip(combine_ray_grads(&[], &d_depth)) {
            backward_ray(&scene, r, &g, &mut grads)?;
        }

        let n_vox = scene.voxels.len();
        let vox_sample: Vec<usize> = if n_vox == 0 {
            Vec::new()
        } else {
            (0..n_reg).map(|_| rng.gen_range(0..n_vox)).collect()
        };
        let pair_sample = draw(&mut rng, &layout.pairs, n_reg);
        let outer_sample = draw(&mut rng, &layout.outer, n_reg);
        let point_sample = draw(&mut rng, &layout.points, n_reg);
        let sg = &mut grads.static_grads[..];
        let l_eik = loss_eikonal(&scene.voxels, &vox_sample, w.eikonal, Some(&mut *sg));
        let l_smooth = loss_smooth(&scene.voxels, &pair_sample, w.smooth, Some(&mut *sg));
        let l_opacity = loss_opacity_lidar(
            &scene.voxels,
            &point_sample,
            scene.density_mode,
            w.opacity,
            Some(&mut *sg),
        );
        let l_empty = loss_empty(
            &scene.voxels,
            &outer_sample,
            scene.density_mode,
            w.empty,
            Some(&mut *sg),
        );

        let total = w.color * l_color
            + w.depth * l_depth
            + w.eikonal * l_eik
            + w.smooth * l_smooth
            + w.opacity * l_opacity
            + w.empty * l_empty;
        if !total.is_finite() || !grads.is_finite() {
            return Err(SalfError::Diverged { step, loss: total });
        }

        let lr = learning_rate(state.step, &cfg.adam);
        adam_step(&mut scene, &grads, &mut state, &cfg.adam)?;
        for (acc, g) in layout.grad_norms.iter_mut().zip(&grads.static_grads) {
            *acc += g.w_c_norm();
        }

        let mut report = None;
        if cfg.densify_enabled && cfg.densify.round_due(step, cfg.steps) {
            let r = densify_and_prune(
                &mut scene,
                &layout.grad_norms,
                Some(&mut state),
                &cfg.densify,
            )?;
            log::info!(
                "step {}: pruned {}, split {} of {}, {} voxels",
                step + 1,
                r.pruned,
                r.split,
                r.split_target,
                r.after
            );
            layout = Layout::build(&scene, &world_points)?;
            report = Some(r);
        }

        let entry = StepLog {
            step,
            total,
            color: l_color,
            depth: l_depth,
            eikonal: l_eik,
            smooth: l_smooth,
            opacity: l_opacity,
            empty: l_empty,
            voxels: scene.voxels.len(),
            lr,
            densify: report,
        };
        hook(&entry, &scene)?;
        logs.push(entry);
    }
    Ok((scene, logs))
}
