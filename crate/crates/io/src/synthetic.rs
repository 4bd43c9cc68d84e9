//! Analytic ground truth for synthetic scenes.
//!
//! The tracer intersects boxes, spheres and planes in closed form and shades
//! them with a single directional light (Lambertian plus ambient, no
//! shadows). It shares only ray generation with the voxel renderers.

use serde::{Deserialize, Serialize};

use salf_core::math::{Aabb, RigidPose, Vec3};
use salf_core::sensors::{camera_rays, gen_lidar_rays, CameraModel, LidarModel, Ray};

use crate::emit::Image;
use crate::error::{IoError, Result};
use crate::rig::{NamedCamera, NamedLidar, SensorRig};

const HIT_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Primitive {
    /// Axis-aligned box, visible from outside and inside. `face_colors`
    /// (order -x, +x, -y, +y, -z, +z) overrides `color` per face.
    Box {
        min: [f64; 3],
        max: [f64; 3],
        color: [f64; 3],
        #[serde(default)]
        face_colors: Option<[[f64; 3]; 6]>,
    },
    Sphere { center: [f64; 3], radius: f64, color: [f64; 3] },
    /// Horizontal plane `z = height`.
    Plane { height: f64, color: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRigSpec {
    pub count: usize,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub orbit_center: [f64; 3],
    pub orbit_radius: f64,
    /// Camera heights, cycled over the frames.
    pub heights: Vec<f64>,
    pub target: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarRigSpec {
    pub beams: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub steps: u32,
    pub scan_period: f64,
    /// Returns beyond this range are dropped.
    pub max_range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub bounds: Aabb,
    pub background: [f64; 3],
    /// Direction towards the light.
    pub light_dir: [f64; 3],
    pub ambient: f64,
    pub primitives: Vec<Primitive>,
    pub cameras: CameraRigSpec,
    pub lidar: LidarRigSpec,
    /// Every `holdout_every`-th frame (starting with frame 0) is held out.
    pub holdout_every: usize,
    pub frame_dt: f64,
    /// Half extents of the per-frame trajectory box around each sensor.
    pub ego_half_extents: [f64; 3],
}

/// SplitMix64, enough for placing a handful of primitives.
struct Jitter(u64);

impl Jitter {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }
}

impl SyntheticSpec {
    /// The reference indoor scene: an 8 x 8 x 3 m room with colored walls,
    /// three boxes and a sphere whose placement and colors depend on `seed`,
    /// 40 frames on an inward-looking orbit and a 16-beam LiDAR per frame.
    pub fn standard(seed: u64) -> Self {
        let mut j = Jitter(seed);
        let color = |j: &mut Jitter| [j.range(0.15, 0.95), j.range(0.15, 0.95), j.range(0.15, 0.95)];
        let room = Primitive::Box {
            min: [-4.0, -4.0, 0.0],
            max: [4.0, 4.0, 3.0],
            color: [0.7, 0.7, 0.7],
            face_colors: Some([
                [0.80, 0.45, 0.35],
                [0.35, 0.55, 0.80],
                [0.45, 0.75, 0.45],
                [0.85, 0.80, 0.40],
                [0.55, 0.50, 0.45],
                [0.90, 0.90, 0.88],
            ]),
        };
        let mut primitives = vec![room];
        for k in 0..3 {
            let ang = 2.0 * std::f64::consts::PI * (f64::from(k) / 3.0 + j.range(-0.05, 0.05));
            let r = j.range(0.6, 1.2);
            let (cx, cy) = (r * ang.cos(), r * ang.sin());
            let (hx, hy, h) = (j.range(0.25, 0.45), j.range(0.25, 0.45), j.range(0.5, 1.4));
            primitives.push(Primitive::Box {
                min: [cx - hx, cy - hy, 0.0],
                max: [cx + hx, cy + hy, h],
                color: color(&mut j),
                face_colors: None,
            });
        }
        let radius = j.range(0.35, 0.5);
        primitives.push(Primitive::Sphere {
            center: [j.range(-0.3, 0.3), j.range(-0.3, 0.3), 1.8 + j.range(0.0, 0.3)],
            radius,
            color: color(&mut j),
        });
        Self {
            seed,
            bounds: Aabb::new(Vec3::new(-4.0, -4.0, 0.0), Vec3::new(4.0, 4.0, 3.0)),
            background: [0.0; 3],
            light_dir: [0.4, 0.3, 0.87],
            ambient: 0.35,
            primitives,
            cameras: CameraRigSpec {
                count: 40,
                width: 128,
                height: 128,
                hfov_deg: 70.0,
                orbit_center: [0.0, 0.0, 0.0],
                orbit_radius: 2.8,
                heights: vec![1.3, 1.8],
                target: [0.0, 0.0, 0.8],
            },
            lidar: LidarRigSpec {
                beams: 16,
                elevation_min_deg: -50.0,
                elevation_max_deg: 40.0,
                steps: 360,
                scan_period: 0.1,
                max_range: 30.0,
            },
            holdout_every: 5,
            frame_dt: 0.1,
            ego_half_extents: [0.3, 0.3, 0.3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !b.is_valid() {
            return Err(IoError::Invalid("synthetic bounds are empty".into()));
        }
        let inside = |p: [f64; 3]| b.contains_box(&Aabb::new(Vec3::from(p), Vec3::from(p)), 1e-9);
        for (i, p) in self.primitives.iter().enumerate() {
            let ok = match p {
                Primitive::Box { min, max, .. } => {
                    inside(*min) && inside(*max) && (0..3).all(|k| min[k] < max[k])
                }
                Primitive::Sphere { center, radius, .. } => {
                    *radius > 0.0 && {
                        let c = Vec3::from(*center);
                        b.contains_box(&Aabb::from_center_extents(c, Vec3::repeat(2.0 * radius)), 1e-9)
                    }
                }
                Primitive::Plane { height, .. } => *height >= b.min.z && *height <= b.max.z,
            };
            if !ok {
                return Err(IoError::Invalid(format!("primitive {i} does not lie inside the bounds")));
            }
        }
        let c = &self.cameras;
        if c.count == 0 || c.heights.is_empty() || c.width == 0 || c.height == 0 || !(c.hfov_deg > 0.0 && c.hfov_deg < 180.0) {
            return Err(IoError::Invalid("camera rig needs frames, heights and a valid field of view".into()));
        }
        if self.lidar.beams == 0 || self.lidar.steps == 0 || !(self.lidar.max_range > 0.0) {
            return Err(IoError::Invalid("LiDAR rig needs beams, steps and a positive range".into()));
        }
        if self.holdout_every == 0 || !(self.ambient >= 0.0 && self.ambient <= 1.0) {
            return Err(IoError::Invalid("holdout_every must be positive and ambient in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_test_frame(&self, frame: usize) -> bool {
        frame % self.holdout_every == 0
    }

    pub fn camera_pose(&self, frame: usize) -> RigidPose {
        let c = &self.cameras;
        let ang = 2.0 * std::f64::consts::PI * frame as f64 / c.count as f64;
        let h = c.heights[frame % c.heights.len()];
        let eye = Vec3::from(c.orbit_center) + Vec3::new(c.orbit_radius * ang.cos(), c.orbit_radius * ang.sin(), h);
        RigidPose::look_at(eye, Vec3::from(c.target), Vec3::z())
    }

    pub fn rig(&self) -> SensorRig {
        let c = &self.cameras;
        let mut rig = SensorRig::default();
        let elev = |b: usize| {
            let l = &self.lidar;
            let f = if l.beams == 1 { 0.5 } else { b as f64 / (l.beams - 1) as f64 };
            (l.elevation_min_deg + f * (l.elevation_max_deg - l.elevation_min_deg)).to_radians()
        };
        for f in 0..c.count {
            let pose = self.camera_pose(f);
            let time = f as f64 * self.frame_dt;
            rig.cameras.push(NamedCamera {
                name: format!("cam_{f:03}"),
                time,
                camera: CameraModel::pinhole_fov(c.width, c.height, c.hfov_deg.to_radians(), pose),
            });
            rig.lidars.push(NamedLidar {
                name: format!("lidar_{f:03}"),
                time,
                lidar: LidarModel {
                    beam_elevations: (0..self.lidar.beams).map(elev).collect(),
                    azimuth_start: 0.0,
                    azimuth_end: 2.0 * std::f64::consts::PI,
                    steps: self.lidar.steps,
                    scan_period: self.lidar.scan_period,
                    pose: RigidPose::from_translation(pose.translation),
                    linear_velocity: Vec3::zeros(),
                    angular_velocity: Vec3::zeros(),
                },
            });
        }
        rig
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Unit normal facing the incoming ray.
    pub normal: Vec3,
    pub albedo: Vec3,
}

fn box_hit(o: &Vec3, d: &Vec3, min: &Vec3, max: &Vec3) -> Option<(f64, usize, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut f0, mut f1) = (0usize, 0usize);
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < min[k] || o[k] > max[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[k];
        let (mut a, mut b) = ((min[k] - o[k]) * inv, (max[k] - o[k]) * inv);
        let (mut fa, mut fb) = (2 * k, 2 * k + 1);
        if a > b {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
        if a > t0 {
            t0 = a;
            f0 = fa;
        }
        if b < t1 {
            t1 = b;
            f1 = fb;
        }
    }
    if t0 > t1 {
        return None;
    }
    if t0 > HIT_EPS {
        Some((t0, f0, 1.0))
    } else if t1 > HIT_EPS {
        Some((t1, f1, -1.0))
    } else {
        None
    }
}

/// Nearest intersection of a unit-direction ray with the primitives.
pub fn intersect(primitives: &[Primitive], o: &Vec3, d: &Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |h: Hit| {
        if best.map_or(true, |b| h.t < b.t) {
            best = Some(h);
        }
    };
    for p in primitives {
        match p {
            Primitive::Box { min, max, color, face_colors } => {
                if let Some((t, face, _)) = box_hit(o, d, &Vec3::from(*min), &Vec3::from(*max)) {
                    let mut n = Vec3::zeros();
                    n[face / 2] = if face % 2 == 0 { -1.0 } else { 1.0 };
                    let albedo = face_colors.map_or(*color, |f| f[face]);
                    consider(Hit { t, normal: n, albedo: Vec3::from(albedo) });
                }
            }
            Primitive::Sphere { center, radius, color } => {
                let oc = o - Vec3::from(*center);
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc >= 0.0 {
                    let s = disc.sqrt();
                    let t = if -b - s > HIT_EPS { -b - s } else { -b + s };
                    if t > HIT_EPS {
                        let n = (o + d * t - Vec3::from(*center)) / *radius;
                        consider(Hit { t, normal: n, albedo: Vec3::from(*color) });
                    }
                }
            }
            Primitive::Plane { height, color } => {
                if d.z != 0.0 {
                    let t = (height - o.z) / d.z;
                    if t > HIT_EPS {
                        consider(Hit { t, normal: Vec3::z(), albedo: Vec3::from(*color) });
                    }
                }
            }
        }
    }
    best.map(|mut h| {
        if h.normal.dot(d) > 0.0 {
            h.normal = -h.normal;
        }
        h
    })
}

/// Flat Lambertian shading under the spec's light.
pub fn shade(spec: &SyntheticSpec, hit: &Hit) -> Vec3 {
    let l = Vec3::from(spec.light_dir).normalize();
    let k = spec.ambient + (1.0 - spec.ambient) * hit.normal.dot(&l).max(0.0);
    (hit.albedo * k).map(|v| v.clamp(0.0, 1.0))
}

/// Ground-truth color and along-ray distance for one ray.
pub fn trace(spec: &SyntheticSpec, ray: &Ray) -> (Vec3, Option<f64>) {
    if !ray.valid {
        return (Vec3::from(spec.background), None);
    }
    match intersect(&spec.primitives, &ray.origin, &ray.dir) {
        Some(h) => (shade(spec, &h), Some(h.t)),
        None => (Vec3::from(spec.background), None),
    }
}

/// Ground-truth image and depth map of a camera.
pub fn render_camera(spec: &SyntheticSpec, cam: &NamedCamera) -> Result<(Image, Vec<Option<f64>>)> {
    let rays = camera_rays(&cam.camera, cam.time)?;
    let (colors, depth): (Vec<Vec3>, Vec<Option<f64>>) = rays.iter().map(|r| trace(spec, r)).unzip();
    Ok((Image::new(cam.camera.width, cam.camera.height, colors)?, depth))
}

/// Ground-truth ranges of one LiDAR sweep, in firing order.
pub fn scan_lidar(spec: &SyntheticSpec, lidar: &NamedLidar) -> Result<(Vec<Ray>, Vec<Option<f64>>)> {
    let rays = gen_lidar_rays(&lidar.lidar, lidar.time)?;
    let ranges = rays
        .iter()
        .map(|r| trace(spec, r).1.filter(|t| *t <= spec.lidar.max_range))
        .collect();
    Ok((rays, ranges))
}

/// Everything generated for a synthetic scene.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub rig: SensorRig,
    pub images: Vec<Image>,
    pub depths: Vec<Vec<Option<f64>>>,
    pub ranges: Vec<Vec<Option<f64>>>,
    /// LiDAR returns of the training frames.
    pub points: Vec<Vec3>,
    /// Sensor boxes of the training frames.
    pub trajectory: Vec<Aabb>,
    pub train_frames: Vec<usize>,
    pub test_frames: Vec<usize>,
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let rig = spec.rig();
    let mut data = SyntheticData {
        spec: spec.clone(),
        rig: rig.clone(),
        images: Vec::new(),
        depths: Vec::new(),
        ranges: Vec::new(),
        points: Vec::new(),
        trajectory: Vec::new(),
        train_frames: Vec::new(),
        test_frames: Vec::new(),
    };
    let half = Vec3::from(spec.ego_half_extents);
    for (f, (cam, lidar)) in rig.cameras.iter().zip(&rig.lidars).enumerate() {
        let (img, depth) = render_camera(spec, cam)?;
        let (rays, ranges) = scan_lidar(spec, lidar)?;
        if spec.is_test_frame(f) {
            data.test_frames.push(f);
        } else {
            data.train_frames.push(f);
            data.points.extend(rays.iter().zip(&ranges).filter_map(|(r, d)| d.map(|d| r.at(d))));
            let p = cam.camera.pose.translation;
            data.trajectory.push(Aabb::new(p - half, p + half));
        }
        data.images.push(img);
        data.depths.push(depth);
        data.ranges.push(ranges);
    }
    Ok(data)
}
