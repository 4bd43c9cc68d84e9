//! End-to-end helpers shared by the CLI and the acceptance suite:
//! initialization from a dataset, training and held-out evaluation.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use salf_core::math::Vec3;
use salf_core::render::raster::{rasterize_scene, RasterOptions};
use salf_core::render::ray::{integrate_rays, render_image, RenderOptions, SceneOctrees};
use salf_core::render::render_depth;
use salf_core::scene::Scene;
use salf_core::sensors::{camera_rays, gen_lidar_rays};
use salf_core::train::{init_multiscale, train_loop_with, DensifyConfig, InitConfig, StepLog, TrainConfig};
use salf_io::{median_range_error, psnr, ssim, Dataset, Image, SensorRig, Split};

pub fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

/// Parses `x,y,z`.
pub fn parse_vec3(s: &str) -> Result<Vec3> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("{s:?} is not a comma-separated vector"))?;
    if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
        bail!("expected three finite components, got {s:?}");
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    Ray,
    Raster,
}

/// Renders the named rig camera at `time` (its own capture time when
/// `None`).
pub fn render_sensor(scene: &Scene, rig: &SensorRig, name: &str, mode: RenderMode, time: Option<f64>) -> Result<Image> {
    let cam = rig.camera(name)?;
    let t = time.unwrap_or(cam.time);
    let fb = match mode {
        RenderMode::Ray => {
            let trees = SceneOctrees::build(scene)?;
            let rays = camera_rays(&cam.camera, t)?;
            render_image(scene, &trees, &rays, cam.camera.width, cam.camera.height, &RenderOptions::default())?
        }
        RenderMode::Raster => rasterize_scene(scene, &cam.camera, t, &RasterOptions::default())?,
    };
    Ok(Image::from_framebuffer(&fb))
}

/// Initialization for the desk-scale reference scene: half-meter inner
/// cells and margins that cover a small room around the sensor path.
pub fn desk_init_config(seed: u64) -> InitConfig {
    InitConfig {
        base_edge: 0.5,
        expand_up: 1.5,
        expand_down: 2.0,
        expand_lateral: 2.0,
        shells: 4,
        extra_levels: 1,
        budget: 200_000,
        seed,
    }
}

pub fn desk_train_config(seed: u64, steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        camera_batch: 4096,
        lidar_batch: 1024,
        reg_samples: None,
        seed,
        densify: DensifyConfig {
            budget: 60_000,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean over frames of per-image PSNR.
    pub psnr: f64,
    pub ssim: f64,
    /// Median absolute range error over all returns of the frames' LiDAR.
    pub median_range_error: Option<f64>,
    pub frames: usize,
}

/// Renders the dataset frames with the ray caster and compares them with
/// the stored ground truth.
pub fn evaluate(scene: &Scene, ds: &Dataset, frames: &[usize]) -> Result<Evaluation> {
    let trees = SceneOctrees::build(scene)?;
    let opts = RenderOptions {
        background: ds.background,
        ..Default::default()
    };
    let (mut p_sum, mut s_sum) = (0.0, 0.0);
    let mut pred_r = Vec::new();
    let mut gt_r = Vec::new();
    for &f in frames {
        let fr = &ds.frames[f];
        let cam = ds.rig.camera(&fr.camera)?;
        let rays = camera_rays(&cam.camera, cam.time)?;
        let fb = render_image(scene, &trees, &rays, cam.camera.width, cam.camera.height, &opts)?;
        let img = Image::from_framebuffer(&fb);
        p_sum += psnr(&img, &ds.images[f])?;
        s_sum += ssim(&img, &ds.images[f])?;
        if let Some(name) = &fr.lidar {
            let l = ds.rig.lidar(name)?;
            let rays = gen_lidar_rays(&l.lidar, l.time)?;
            let recs = integrate_rays(scene, &trees, &rays, &opts)?;
            pred_r.extend(recs.iter().map(render_depth));
            gt_r.extend_from_slice(&ds.ranges[f]);
        }
    }
    let n = frames.len().max(1) as f64;
    Ok(Evaluation {
        psnr: p_sum / n,
        ssim: s_sum / n,
        median_range_error: median_range_error(&pred_r, &gt_r)?,
        frames: frames.len(),
    })
}

/// Initial scene from the dataset's training trajectory and point cloud.
pub fn init_from_dataset(ds: &Dataset, cfg: &InitConfig) -> Result<Scene> {
    init_multiscale(&ds.trajectory, &ds.points, cfg).context("initializing the scene")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub initial_voxels: usize,
    pub final_voxels: usize,
    pub seconds: f64,
    pub test: Evaluation,
    pub logs: Vec<StepLog>,
}

/// Initializes, trains on the training split and evaluates on the test
/// split. `on_step` sees each log entry.
pub fn train_and_evaluate(
    ds: &Dataset,
    init: &InitConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog, &Scene) -> Result<()>,
) -> Result<(Scene, RunReport)> {
    let start = Instant::now();
    let scene = init_from_dataset(ds, init)?;
    let initial_voxels = scene.voxels.len();
    let data = ds.train_data(&ds.frames_in(Split::Train))?;
    let mut cfg = cfg.clone();
    cfg.background = ds.background.into();
    let (scene, logs) = train_loop_with(scene, &data, &cfg, |l, s| {
        on_step(l, s).map_err(|e| salf_core::SalfError::InvalidConfig(format!("step hook failed: {e}")))
    })?;
    let test = evaluate(&scene, ds, &ds.frames_in(Split::Test))?;
    Ok((
        scene.clone(),
        RunReport {
            initial_voxels,
            final_voxels: scene.voxels.len(),
            seconds: start.elapsed().as_secs_f64(),
            test,
            logs,
        },
    ))
}
