//! Small geometric vocabulary shared by every module: vectors, rigid poses
//! and axis-aligned boxes.

use serde::{Deserialize, Serialize};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Quat = nalgebra::UnitQuaternion<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Rigid transform `p_out = rotation * p_in + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Quat::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Quat::identity(), translation)
    }

    /// Pose whose +z axis points from `eye` toward `target`, with +y pointing
    /// as close to `-up` as possible (x right, y down, z forward camera frame).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let m = Mat3::from_columns(&[right, down, forward]);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(m);
        Self::new(Quat::from_rotation_matrix(&rot), eye)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation
            .inverse_transform_vector(&(p - self.translation))
    }

    pub fn inverse_transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(v)
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(inv, -(inv * self.translation))
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn is_valid(&self) -> bool {
        let q = self.rotation.quaternion();
        q.coords.iter().all(|c| c.is_finite())
            && (q.norm() - 1.0).abs() < 1e-6
            && self.translation.iter().all(|c| c.is_finite())
    }
}

/// Closed axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn from_center_extents(center: Vec3, extents: Vec3) -> Self {
        Self::new(center - extents * 0.5, center + extents * 0.5)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn contains_box(&self, other: &Aabb, tol: f64) -> bool {
        (0..3).all(|k| other.min[k] >= self.min[k] - tol && other.max[k] <= self.max[k] + tol)
    }

    /// Box scaled by `factor` about its own center.
    pub fn scaled(&self, factor: f64) -> Aabb {
        Aabb::from_center_extents(self.center(), self.extents() * factor)
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|k| {
            self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] < self.max[k]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_inverse_round_trip() {
        let pose = RigidPose::new(
            Quat::from_euler_angles(0.3, -0.2, 1.1),
            Vec3::new(1.0, -2.0, 0.5),
        );
        let p = Vec3::new(0.25, 4.0, -1.0);
        let back = pose.inverse().transform_point(&pose.transform_point(&p));
        assert!((back - p).norm() < 1e-12);
        let back2 = pose.inverse_transform_point(&pose.transform_point(&p));
        assert!((back2 - p).norm() < 1e-12);
    }

    #[test]
    fn look_at_points_z_forward() {
        let pose = RigidPose::look_at(
            Vec3::new(0.0, -5.0, 1.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::z(),
        );
        let fwd = pose.transform_vector(&Vec3::z());
        assert!((fwd - Vec3::y()).norm() < 1e-12);
        let down = pose.transform_vector(&Vec3::y());
        assert!((down + Vec3::z()).norm() < 1e-12);
    }
}
