//! Ray generation for cameras (pinhole, equidistant fisheye, equirectangular)
//! and spinning LiDAR, with per-ray timestamps and first-order ego motion.
//!
//! Camera frame: x right, y down, z forward. LiDAR frame: x forward, z up,
//! azimuth counter-clockwise from +x. Pixel `(col, row)` has its center at
//! continuous coordinates `(col + 0.5, row + 0.5)`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalfError};
use crate::math::{Quat, RigidPose, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_stamp: f64,
    /// `(row, col)` for cameras, `(beam, step)` for LiDAR.
    pub key: [u32; 2],
    /// False when the pixel has no valid viewing direction (fisheye beyond
    /// its field of view).
    pub valid: bool,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Self {
            origin,
            dir,
            t_stamp: 0.0,
            key: [0, 0],
            valid: true,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraKind {
    Pinhole,
    FisheyeEquidistant,
    Equirect,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shutter {
    #[default]
    Global,
    /// Rows exposed top to bottom over `readout_duration` seconds.
    Rolling { readout_duration: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub kind: CameraKind,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub fx: f64,
    #[serde(default)]
    pub fy: f64,
    #[serde(default)]
    pub cx: f64,
    #[serde(default)]
    pub cy: f64,
    /// Fisheye polynomial `k1..k4`.
    #[serde(default)]
    pub distortion: [f64; 4],
    /// Camera-to-world pose at shutter start.
    pub pose: RigidPose,
    #[serde(default)]
    pub shutter: Shutter,
    #[serde(default = "Vec3::zeros")]
    pub linear_velocity: Vec3,
    #[serde(default = "Vec3::zeros")]
    pub angular_velocity: Vec3,
}

impl CameraModel {
    pub fn pinhole(
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        pose: RigidPose,
    ) -> Self {
        Self {
            kind: CameraKind::Pinhole,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            distortion: [0.0; 4],
            pose,
            shutter: Shutter::Global,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
        }
    }

    /// Pinhole camera with the principal point at the image center and the
    /// given horizontal field of view.
    pub fn pinhole_fov(width: u32, height: u32, hfov: f64, pose: RigidPose) -> Self {
        let f = 0.5 * f64::from(width) / (0.5 * hfov).tan();
        Self::pinhole(
            width,
            height,
            f,
            f,
            0.5 * f64::from(width),
            0.5 * f64::from(height),
            pose,
        )
    }

    pub fn equirect(width: u32, height: u32, pose: RigidPose) -> Self {
        Self {
            kind: CameraKind::Equirect,
            ..Self::pinhole(width, height, 0.0, 0.0, 0.0, 0.0, pose)
        }
    }

    pub fn fisheye(
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        k: [f64; 4],
        pose: RigidPose,
    ) -> Self {
        Self {
            kind: CameraKind::FisheyeEquidistant,
            distortion: k,
            ..Self::pinhole(width, height, fx, fy, cx, cy, pose)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(SalfError::InvalidSensor(
                "image dimensions must be at least 1".into(),
            ));
        }
        if let Shutter::Rolling { readout_duration } = self.shutter {
            if !(readout_duration >= 0.0) {
                return Err(SalfError::InvalidSensor(
                    "readout_duration must be non-negative".into(),
                ));
            }
        }
        if self.kind != CameraKind::Equirect && !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SalfError::InvalidSensor(
                "focal lengths must be positive".into(),
            ));
        }
        if !self.pose.is_valid() {
            return Err(SalfError::InvalidSensor(
                "camera pose is not a rigid transform".into(),
            ));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Unit viewing direction in the camera frame for continuous pixel
    /// coordinates, or `None` outside the model's valid domain.
    pub fn pixel_direction(&self, u: f64, v: f64) -> Option<Vec3> {
        match self.kind {
            CameraKind::Pinhole => {
                let d = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
                Some(d.normalize())
            }
            CameraKind::FisheyeEquidistant => {
                let mx = (u - self.cx) / self.fx;
                let my = (v - self.cy) / self.fy;
                let r = (mx * mx + my * my).sqrt();
                if r == 0.0 {
                    return Some(Vec3::z());
                }
                let theta = fisheye_theta(r, &self.distortion)?;
                let s = theta.sin();
                Some(Vec3::new(s * mx / r, s * my / r, theta.cos()))
            }
            CameraKind::Equirect => {
                let (az, el) = equirect_angles(self, u, v);
                Some(Vec3::new(
                    el.cos() * az.sin(),
                    -el.sin(),
                    el.cos() * az.cos(),
                ))
            }
        }
    }

    /// Continuous pixel coordinates of a camera-frame point (pinhole only).
    pub fn project(&self, p_cam: &Vec3) -> Option<(f64, f64)> {
        if self.kind != CameraKind::Pinhole || p_cam.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    fn row_time_offset(&self, row: u32) -> f64 {
        match self.shutter {
            Shutter::Global => 0.0,
            Shutter::Rolling { readout_duration } => {
                if self.height <= 1 {
                    0.0
                } else {
                    readout_duration * (f64::from(row) / f64::from(self.height - 1))
                }
            }
        }
    }
}

/// Azimuth and elevation of continuous pixel coordinates; azimuth spans
/// `[-pi, pi]` across the width and is 0 at mid-width, elevation spans
/// `[pi/2, -pi/2]` down the height.
pub fn equirect_angles(cam: &CameraModel, u: f64, v: f64) -> (f64, f64) {
    let az = u / f64::from(cam.width) * 2.0 * PI - PI;
    let el = FRAC_PI_2 - v / f64::from(cam.height) * PI;
    (az, el)
}

/// Distorted equidistant radius `theta (1 + k1 theta^2 + ... + k4 theta^8)`.
pub fn fisheye_distort(theta: f64, k: &[f64; 4]) -> f64 {
    let t2 = theta * theta;
    theta * (1.0 + t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3]))))
}

/// Largest polar angle (up to pi) over which the distortion polynomial is
/// increasing.
fn fisheye_theta_max(k: &[f64; 4]) -> f64 {
    const STEPS: usize = 2048;
    let mut prev = 0.0;
    for i in 1..=STEPS {
        let th = PI * i as f64 / STEPS as f64;
        let r = fisheye_distort(th, k);
        if r <= prev {
            return PI * (i - 1) as f64 / STEPS as f64;
        }
        prev = r;
    }
    PI
}

/// Inverts the distortion polynomial by bisection; `None` past the valid
/// radius.
pub fn fisheye_theta(r: f64, k: &[f64; 4]) -> Option<f64> {
    let hi_limit = fisheye_theta_max(k);
    if r > fisheye_distort(hi_limit, k) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, hi_limit);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if fisheye_distort(mid, k) < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    Some(theta)
}

/// Global-shutter rays for every pixel, row-major, all stamped `t0`.
pub fn gen_camera_rays(cam: &CameraModel, t0: f64) -> Result<Vec<Ray>> {
    cam.validate()?;
    let mut rays = Vec::with_capacity(cam.pixel_count());
    for row in 0..cam.height {
        for col in 0..cam.width {
            let d = cam.pixel_direction(f64::from(col) + 0.5, f64::from(row) + 0.5);
            rays.push(Ray {
                origin: cam.pose.translation,
                dir: cam.pose.transform_vector(&d.unwrap_or_else(Vec3::z)),
                t_stamp: t0,
                key: [row, col],
                valid: d.is_some(),
            });
        }
    }
    Ok(rays)
}

/// Rotation of the sensor over `dt` under constant angular velocity.
fn motion_rotation(angular_velocity: &Vec3, dt: f64) -> Quat {
    Quat::from_scaled_axis(angular_velocity * dt)
}

/// Advances a ray emitted `dt` seconds after the reference pose under
/// constant linear and angular velocity. `dt == 0` returns the ray unchanged.
fn advance_ray(ray: &mut Ray, linear: &Vec3, angular: &Vec3, dt: f64) {
    if dt == 0.0 {
        return;
    }
    ray.origin += linear * dt;
    if angular.norm_squared() > 0.0 {
        ray.dir = (motion_rotation(angular, dt) * ray.dir).normalize();
    }
    ray.t_stamp += dt;
}

/// Re-times rows for a rolling shutter and moves each ray's origin and
/// direction with the camera's velocity. Global shutter leaves the batch
/// unchanged.
pub fn apply_rolling_shutter(batch: &[Ray], cam: &CameraModel) -> Vec<Ray> {
    batch
        .iter()
        .map(|r| {
            let mut out = *r;
            let dt = cam.row_time_offset(r.key[0]);
            advance_ray(&mut out, &cam.linear_velocity, &cam.angular_velocity, dt);
            out
        })
        .collect()
}

/// Camera rays including the shutter model.
pub fn camera_rays(cam: &CameraModel, t0: f64) -> Result<Vec<Ray>> {
    let rays = gen_camera_rays(cam, t0)?;
    Ok(match cam.shutter {
        Shutter::Global => rays,
        Shutter::Rolling { .. } => apply_rolling_shutter(&rays, cam),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarModel {
    pub beam_elevations: Vec<f64>,
    pub azimuth_start: f64,
    pub azimuth_end: f64,
    pub steps: u32,
    pub scan_period: f64,
    /// Sensor-to-world pose at scan start.
    pub pose: RigidPose,
    #[serde(default = "Vec3::zeros")]
    pub linear_velocity: Vec3,
    #[serde(default = "Vec3::zeros")]
    pub angular_velocity: Vec3,
}

impl LidarModel {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(SalfError::InvalidSensor(
                "LiDAR needs at least one azimuth step".into(),
            ));
        }
        if !(self.scan_period > 0.0) {
            return Err(SalfError::InvalidSensor(
                "scan_period must be positive".into(),
            ));
        }
        if self.beam_elevations.is_empty() {
            return Err(SalfError::InvalidSensor(
                "LiDAR needs at least one beam".into(),
            ));
        }
        if !self.pose.is_valid() {
            return Err(SalfError::InvalidSensor(
                "LiDAR pose is not a rigid transform".into(),
            ));
        }
        Ok(())
    }

    pub fn ray_count(&self) -> usize {
        self.beam_elevations.len() * self.steps as usize
    }

    pub fn azimuth(&self, step: u32) -> f64 {
        self.azimuth_start
            + (self.azimuth_end - self.azimuth_start) * f64::from(step) / f64::from(self.steps)
    }
}

/// Sensor-frame beam direction: x forward, z up, azimuth counter-clockwise.
pub fn lidar_direction(azimuth: f64, elevation: f64) -> Vec3 {
    Vec3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    )
}

/// One sweep in firing order (step-major, beams within a step).
pub fn gen_lidar_rays(lidar: &LidarModel, t0: f64) -> Result<Vec<Ray>> {
    lidar.validate()?;
    let mut rays = Vec::with_capacity(lidar.ray_count());
    for step in 0..lidar.steps {
        let az = lidar.azimuth(step);
        let dt = lidar.scan_period * f64::from(step) / f64::from(lidar.steps);
        for (beam, &el) in lidar.beam_elevations.iter().enumerate() {
            let mut ray = Ray {
                origin: lidar.pose.translation,
                dir: lidar.pose.transform_vector(&lidar_direction(az, el)),
                t_stamp: t0,
                key: [beam as u32, step],
                valid: true,
            };
            advance_ray(
                &mut ray,
                &lidar.linear_velocity,
                &lidar.angular_velocity,
                dt,
            );
            ray.t_stamp = t0 + dt;
            rays.push(ray);
        }
    }
    Ok(rays)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_pose() -> RigidPose {
        RigidPose::new(
            Quat::from_euler_angles(0.2, -0.4, 1.3),
            Vec3::new(1.0, 2.0, 3.0),
        )
    }

    #[test]
    fn pinhole_principal_point_is_forward() {
        let cam = CameraModel::pinhole(128, 96, 100.0, 100.0, 64.5, 48.5, test_pose());
        let rays = gen_camera_rays(&cam, 0.0).unwrap();
        let r = rays[48 * 128 + 64];
        assert_eq!(r.key, [48, 64]);
        let fwd = test_pose().transform_vector(&Vec3::z());
        assert!((r.dir - fwd).norm() < 1e-12);
        assert_eq!(r.origin, test_pose().translation);
    }

    #[test]
    fn pinhole_project_unproject_round_trip() {
        let cam = CameraModel::pinhole(200, 150, 180.0, 170.0, 99.0, 77.0, RigidPose::identity());
        for row in (0..150).step_by(7) {
            for col in (0..200).step_by(11) {
                let (u, v) = (f64::from(col) + 0.5, f64::from(row) + 0.5);
                let d = cam.pixel_direction(u, v).unwrap();
                let (pu, pv) = cam.project(&(d * 3.7)).unwrap();
                assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn equirect_center_and_wrap() {
        let cam = CameraModel::equirect(64, 32, RigidPose::identity());
        let d = cam.pixel_direction(32.0, 16.0).unwrap();
        assert!((d - Vec3::z()).norm() < 1e-12);
        let (a0, _) = equirect_angles(&cam, 0.0, 16.0);
        let (a1, _) = equirect_angles(&cam, 64.0, 16.0);
        assert!((a1 - a0 - 2.0 * PI).abs() < 1e-12);
        let left = cam.pixel_direction(0.0, 16.0).unwrap();
        let right = cam.pixel_direction(64.0, 16.0).unwrap();
        assert!((left - right).norm() < 1e-12);
    }

    #[test]
    fn fisheye_without_distortion_is_equidistant() {
        let cam = CameraModel::fisheye(
            100,
            100,
            40.0,
            40.0,
            50.0,
            50.0,
            [0.0; 4],
            RigidPose::identity(),
        );
        let d = cam.pixel_direction(50.0 + 30.0, 50.0).unwrap();
        let theta = d.z.acos();
        assert!((theta - 30.0 / 40.0).abs() < 1e-12);
    }

    #[test]
    fn fisheye_inversion_residual() {
        let k = [-0.05, 0.01, -0.002, 0.0001];
        let cam = CameraModel::fisheye(160, 120, 60.0, 60.0, 80.0, 60.0, k, RigidPose::identity());
        let rays = gen_camera_rays(&cam, 0.0).unwrap();
        let mut valid = 0;
        for r in &rays {
            if !r.valid {
                continue;
            }
            valid += 1;
            let u = f64::from(r.key[1]) + 0.5;
            let v = f64::from(r.key[0]) + 0.5;
            let rd = (((u - 80.0) / 60.0).powi(2) + ((v - 60.0) / 60.0).powi(2)).sqrt();
            let theta = r.dir.z.clamp(-1.0, 1.0).acos();
            let th = fisheye_theta(rd, &k).unwrap();
            assert!((fisheye_distort(th, &k) - rd).abs() < 1e-10);
            assert!((th - theta).abs() < 1e-6);
        }
        assert!(valid > 0);
    }

    #[test]
    fn fisheye_outside_valid_radius_is_flagged() {
        // Strong negative k1 folds the polynomial back well before pi.
        let k = [-0.3, 0.0, 0.0, 0.0];
        let cam = CameraModel::fisheye(100, 100, 10.0, 10.0, 50.0, 50.0, k, RigidPose::identity());
        let rays = gen_camera_rays(&cam, 0.0).unwrap();
        assert!(rays.iter().any(|r| !r.valid));
        assert!(rays.iter().any(|r| r.valid));
    }

    #[test]
    fn all_directions_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cams = [
            CameraModel::pinhole(40, 30, 35.0, 35.0, 20.0, 15.0, test_pose()),
            CameraModel::fisheye(
                40,
                30,
                12.0,
                12.0,
                20.0,
                15.0,
                [0.01, 0.0, 0.0, 0.0],
                test_pose(),
            ),
            CameraModel::equirect(40, 30, test_pose()),
        ];
        for cam in &cams {
            let mut cam = cam.clone();
            cam.shutter = Shutter::Rolling {
                readout_duration: 0.05,
            };
            cam.linear_velocity = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            cam.angular_velocity = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            for r in camera_rays(&cam, 1.0).unwrap() {
                assert!((r.dir.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rolling_shutter_zero_readout_is_identity() {
        let mut cam = CameraModel::pinhole_fov(16, 12, 1.0, test_pose());
        cam.linear_velocity = Vec3::new(3.0, 0.0, 0.0);
        cam.angular_velocity = Vec3::new(0.0, 0.0, 1.0);
        let global = gen_camera_rays(&cam, 0.5).unwrap();
        cam.shutter = Shutter::Rolling {
            readout_duration: 0.0,
        };
        assert_eq!(apply_rolling_shutter(&global, &cam), global);
    }

    #[test]
    fn rolling_shutter_zero_velocity_keeps_origins() {
        let mut cam = CameraModel::pinhole_fov(16, 12, 1.0, test_pose());
        cam.shutter = Shutter::Rolling {
            readout_duration: 0.03,
        };
        let global = gen_camera_rays(&cam, 0.0).unwrap();
        let rolled = apply_rolling_shutter(&global, &cam);
        for (g, r) in global.iter().zip(&rolled) {
            assert_eq!(g.origin, r.origin);
            assert_eq!(g.dir, r.dir);
            let expected = 0.03 * f64::from(r.key[0]) / 11.0;
            assert!((r.t_stamp - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn rolling_shutter_linear_displacement() {
        let mut cam = CameraModel::pinhole_fov(8, 10, 1.0, RigidPose::identity());
        cam.shutter = Shutter::Rolling {
            readout_duration: 0.1,
        };
        cam.linear_velocity = Vec3::new(1.0, 0.0, 0.0);
        let rays = camera_rays(&cam, 0.0).unwrap();
        let first = rays[0].origin;
        let last = rays[rays.len() - 1].origin;
        assert!(((last - first) - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
    }

    fn simple_lidar() -> LidarModel {
        LidarModel {
            beam_elevations: vec![0.0],
            azimuth_start: 0.0,
            azimuth_end: PI,
            steps: 2,
            scan_period: 0.1,
            pose: RigidPose::identity(),
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
        }
    }

    #[test]
    fn lidar_polar_convention() {
        let rays = gen_lidar_rays(&simple_lidar(), 0.0).unwrap();
        assert_eq!(rays.len(), 2);
        assert!((rays[0].dir - Vec3::x()).norm() < 1e-15);
        assert!((rays[1].dir - Vec3::y()).norm() < 1e-15);
        assert_eq!(rays[0].origin, rays[1].origin);
    }

    #[test]
    fn lidar_timestamps_uniform() {
        let mut l = simple_lidar();
        l.steps = 1000;
        l.azimuth_end = 2.0 * PI;
        let rays = gen_lidar_rays(&l, 2.0).unwrap();
        for w in rays.windows(2) {
            assert!((w[1].t_stamp - w[0].t_stamp - 1e-4).abs() < 1e-12);
        }
        assert_eq!(rays[0].t_stamp, 2.0);
    }

    #[test]
    fn lidar_ego_motion_moves_origin() {
        let mut l = simple_lidar();
        l.linear_velocity = Vec3::new(0.0, 2.0, 0.0);
        let rays = gen_lidar_rays(&l, 0.0).unwrap();
        assert!((rays[1].origin - Vec3::new(0.0, 0.1, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn invalid_models_rejected() {
        let mut l = simple_lidar();
        l.steps = 0;
        assert!(gen_lidar_rays(&l, 0.0).is_err());
        let cam = CameraModel::pinhole(0, 10, 1.0, 1.0, 0.0, 0.0, RigidPose::identity());
        assert!(gen_camera_rays(&cam, 0.0).is_err());
    }
}
