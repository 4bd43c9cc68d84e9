use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use salf_cli::bench::{default_bench_pose, format_render_table, time_marching, time_renderers};
use salf_cli::pipeline::{evaluate, parse_vec3, read_json_file, render_sensor, RenderMode};
use salf_core::render::effects::{trace_effects, InjectedSphere};
use salf_core::render::ray::{integrate_rays, RenderOptions, SceneOctrees};
use salf_core::render::render_depth;
use salf_core::sensors::{camera_rays, gen_lidar_rays};
use salf_core::train::{init_multiscale, train_loop_with, InitConfig, TrainConfig};
use salf_io::emit::{points_from_ranges, read_ply, write_ply};
use salf_io::{
    load_dataset, load_scene, make_synthetic, mean_l1, psnr, read_image, save_scene, ssim, write_image, write_synthetic,
    Image, SensorRig, Split, SyntheticSpec,
};

#[derive(Parser)]
#[command(name = "salf", version, about = "Sparse local field scenes: build, train, render")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ray,
    Raster,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with the analytic reference tracer.
    MakeSynthetic {
        /// Scene description (JSON); the standard scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Seed of the standard scene.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an initial multi-scale scene from a point cloud and sensor path.
    Init {
        #[arg(long)]
        points: PathBuf,
        /// JSON list of axis-aligned boxes `{"min": [..], "max": [..]}`.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Initialization parameters (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sensor rig to store with the scene.
        #[arg(long)]
        sensors: Option<PathBuf>,
    },
    /// Optimize a scene against a dataset directory.
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Training parameters (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Line-delimited JSON log; `<out>/train_log.jsonl` by default.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render one camera of the scene's rig.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        sensor: String,
        #[arg(long, value_enum, default_value_t = Mode::Ray)]
        mode: Mode,
        /// Capture time; the sensor's own time when omitted.
        #[arg(long)]
        time: Option<f64>,
        /// `.png` for PNG, anything else for binary PPM.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a LiDAR sweep and write the returns as PLY.
    Lidar {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        sensor: String,
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two images.
    Diff {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Renderer and traversal timings.
    Bench {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
        resolutions: Vec<u32>,
        #[arg(long, default_value_t = 2)]
        repeats: usize,
        /// Resolution of the octree against brute-force comparison.
        #[arg(long, default_value_t = 512)]
        march_resolution: u32,
    },
    /// Render with inserted mirror, glass or opaque spheres and sun shadows.
    Fx {
        #[arg(long)]
        scene: PathBuf,
        /// JSON list of spheres.
        #[arg(long)]
        spheres: PathBuf,
        /// Direction towards the sun, `dx,dy,dz`.
        #[arg(long, allow_hyphen_values = true)]
        sun: String,
        /// Camera of the rig; the first one when omitted.
        #[arg(long)]
        sensor: Option<String>,
        #[arg(long, default_value_t = 4)]
        bounces: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained scene on a dataset's held-out frames.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::MakeSynthetic { spec, seed, out } => {
            let spec = match spec {
                Some(p) => read_json_file::<SyntheticSpec>(&p)?,
                None => SyntheticSpec::standard(seed),
            };
            let data = make_synthetic(&spec)?;
            write_synthetic(&out, &data)?;
            println!(
                "wrote {} frames ({} train, {} test), {} points to {}",
                data.images.len(),
                data.train_frames.len(),
                data.test_frames.len(),
                data.points.len(),
                out.display()
            );
        }
        Cmd::Init {
            points,
            trajectory,
            out,
            config,
            sensors,
        } => {
            let cfg = match config {
                Some(p) => read_json_file::<InitConfig>(&p)?,
                None => InitConfig::default(),
            };
            let pts = read_ply(&points)?;
            let traj = salf_io::dataset::read_trajectory(&trajectory)?;
            let rig = match sensors {
                Some(p) => read_json_file::<SensorRig>(&p)?,
                None => SensorRig::default(),
            };
            let scene = init_multiscale(&traj, &pts, &cfg)?;
            save_scene(&out, &scene, &rig)?;
            println!("initialized {} voxels from {} points", scene.voxels.len(), pts.len());
        }
        Cmd::Train {
            scene,
            data,
            config,
            out,
            log,
        } => train(&scene, &data, config.as_deref(), &out, log)?,
        Cmd::Render {
            scene,
            sensor,
            mode,
            time,
            out,
        } => {
            let (scene, rig) = load_scene(&scene)?;
            let mode = match mode {
                Mode::Ray => RenderMode::Ray,
                Mode::Raster => RenderMode::Raster,
            };
            let img = render_sensor(&scene, &rig, &sensor, mode, time)?;
            write_image(&img, &out)?;
        }
        Cmd::Lidar {
            scene,
            sensor,
            time,
            out,
        } => {
            let (scene, rig) = load_scene(&scene)?;
            let l = rig.lidar(&sensor)?;
            let rays = gen_lidar_rays(&l.lidar, time.unwrap_or(l.time))?;
            let trees = SceneOctrees::build(&scene)?;
            let recs = integrate_rays(&scene, &trees, &rays, &RenderOptions::default())?;
            let ranges: Vec<Option<f64>> = recs.iter().map(render_depth).collect();
            let pts = points_from_ranges(&rays, &ranges)?;
            write_ply(&pts, &out)?;
            println!("{} of {} rays returned", pts.len(), rays.len());
        }
        Cmd::Diff { a, b } => {
            let (a, b) = (read_image(&a)?, read_image(&b)?);
            println!("mean_l1 {:.6}", mean_l1(&a, &b)?);
            println!("psnr    {:.4}", psnr(&a, &b)?);
            println!("ssim    {:.6}", ssim(&a, &b)?);
        }
        Cmd::Bench {
            scene,
            resolutions,
            repeats,
            march_resolution,
        } => {
            let (scene, rig) = load_scene(&scene)?;
            let pose = rig.cameras.first().map_or_else(|| default_bench_pose(&scene), |c| c.camera.pose);
            let rows = time_renderers(&scene, pose, &resolutions, repeats)?;
            print!("{}", format_render_table(&rows));
            let m = time_marching(&scene.voxels, &scene, pose, march_resolution)?;
            println!(
                "march {0}x{0}, {1} voxels: octree {2:.3} s, brute force {3:.3} s, speedup {4:.1}x",
                march_resolution,
                m.voxels,
                m.octree_seconds,
                m.brute_seconds,
                m.speedup()
            );
        }
        Cmd::Fx {
            scene,
            spheres,
            sun,
            sensor,
            bounces,
            out,
        } => {
            let (scene, rig) = load_scene(&scene)?;
            let spheres: Vec<InjectedSphere> = read_json_file(&spheres)?;
            let sun = parse_vec3(&sun)?;
            let cam = match &sensor {
                Some(n) => rig.camera(n)?,
                None => rig.cameras.first().context("the scene has no cameras")?,
            };
            let rays = camera_rays(&cam.camera, cam.time)?;
            let trees = SceneOctrees::build(&scene)?;
            let opts = RenderOptions::default();
            let pixels = rays
                .iter()
                .map(|r| trace_effects(&scene, &trees, r, &spheres, &sun, bounces, &opts))
                .collect::<salf_core::Result<Vec<_>>>()?;
            write_image(&Image::new(cam.camera.width, cam.camera.height, pixels)?, &out)?;
        }
        Cmd::Eval { scene, data } => {
            let (scene, _) = load_scene(&scene)?;
            let ds = load_dataset(&data)?;
            let ev = evaluate(&scene, &ds, &ds.frames_in(Split::Test))?;
            println!("{}", serde_json::to_string_pretty(&ev)?);
        }
    }
    Ok(())
}

fn train(scene: &Path, data: &Path, config: Option<&Path>, out: &Path, log: Option<PathBuf>) -> Result<()> {
    let (scene, _) = load_scene(scene)?;
    let ds = load_dataset(data)?;
    let mut cfg = match config {
        Some(p) => read_json_file::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    cfg.background = ds.background.into();
    let train_data = ds.train_data(&ds.frames_in(Split::Train))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log_path = log.unwrap_or_else(|| out.join("train_log.jsonl"));
    let mut log_file =
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let total = cfg.steps;
    let (scene, _) = train_loop_with(scene, &train_data, &cfg, |l, _| {
        let line = serde_json::to_string(l).expect("log records serialize");
        writeln!(log_file, "{line}").map_err(|e| salf_core::SalfError::InvalidConfig(format!("writing log: {e}")))?;
        if l.step % 100 == 0 || l.step + 1 == total || l.densify.is_some() {
            log::info!(
                "step {} loss {:.4} color {:.4} depth {:.4} voxels {}",
                l.step,
                l.total,
                l.color,
                l.depth,
                l.voxels
            );
        }
        Ok(())
    })?;
    save_scene(out, &scene, &ds.rig)?;
    let test = ds.frames_in(Split::Test);
    if !test.is_empty() {
        let ev = evaluate(&scene, &ds, &test)?;
        println!(
            "held-out psnr {:.3} dB, ssim {:.4}, median range error {}",
            ev.psnr,
            ev.ssim,
            ev.median_range_error.map_or("n/a".into(), |e| format!("{e:.4} m"))
        );
    }
    if scene.voxels.is_empty() {
        bail!("training removed every voxel");
    }
    Ok(())
}
