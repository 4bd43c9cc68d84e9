//! Volume rendering of a [`Scene`](crate::scene::Scene): front-to-back alpha
//! compositing shared by the octree ray-caster and the tile rasterizer.

pub mod effects;
pub mod raster;
pub mod ray;

use crate::math::Vec3;

/// Accumulated opacity at which compositing stops.
pub const TERMINATION_OPACITY: f64 = 0.99;
/// Minimum accumulated weight for a depth return.
pub const DEPTH_MIN_WEIGHT: f64 = 0.5;

/// Which voxel set a segment belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    Static,
    /// Index into `Scene::actors`.
    Actor(usize),
}

/// One composited segment, retained for the backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentRecord {
    pub voxel: u32,
    pub owner: Owner,
    pub t_entry: f64,
    pub t_exit: f64,
    /// Midpoint in the voxel's normalized coordinates.
    pub local: Vec3,
    /// View direction in the voxel's frame.
    pub omega: Vec3,
    pub sdf: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub color: Vec3,
    /// Transmittance before this segment.
    pub transmittance: f64,
}

impl SegmentRecord {
    pub fn delta(&self) -> f64 {
        self.t_exit - self.t_entry
    }

    pub fn t_mid(&self) -> f64 {
        0.5 * (self.t_entry + self.t_exit)
    }

    pub fn weight(&self) -> f64 {
        self.transmittance * self.alpha
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderRecord {
    /// Empty unless segments were requested.
    pub segments: Vec<SegmentRecord>,
    pub color: Vec3,
    /// `1 - T_final`.
    pub opacity: f64,
    /// Sum of `w_i` over composited segments.
    pub weight_sum: f64,
    /// Sum of `w_i * t_mid(i)`.
    pub depth_sum: f64,
    pub background: Vec3,
    /// Transmittance left after the last composited segment.
    pub final_transmittance: f64,
    pub(crate) retained: bool,
}

impl RenderRecord {
    pub fn background_only(background: Vec3) -> Self {
        Self {
            segments: Vec::new(),
            color: background,
            opacity: 0.0,
            weight_sum: 0.0,
            depth_sum: 0.0,
            background,
            final_transmittance: 1.0,
            retained: true,
        }
    }

    pub fn has_segments(&self) -> bool {
        self.retained
    }
}

/// Expected depth `sum(w t_mid) / sum(w)`, or `None` (no return) when the
/// accumulated weight is at most 0.5.
pub fn render_depth(record: &RenderRecord) -> Option<f64> {
    (record.weight_sum > DEPTH_MIN_WEIGHT).then(|| record.depth_sum / record.weight_sum)
}

/// Front-to-back compositor.
#[derive(Clone, Debug)]
pub(crate) struct Compositor {
    pub color: Vec3,
    pub transmittance: f64,
    pub weight_sum: f64,
    pub depth_sum: f64,
    pub termination: f64,
}

impl Compositor {
    pub fn new(termination: f64) -> Self {
        Self {
            color: Vec3::zeros(),
            transmittance: 1.0,
            weight_sum: 0.0,
            depth_sum: 0.0,
            termination,
        }
    }

    pub fn done(&self) -> bool {
        1.0 - self.transmittance >= self.termination
    }

    /// Adds one segment; returns the transmittance before it.
    #[inline]
    pub fn add(&mut self, alpha: f64, color: &Vec3, t_mid: f64) -> f64 {
        let t_before = self.transmittance;
        let w = t_before * alpha;
        self.color += color * w;
        self.weight_sum += w;
        self.depth_sum += w * t_mid;
        self.transmittance = t_before * (1.0 - alpha);
        t_before
    }

    pub fn finish(
        self,
        background: Vec3,
        segments: Vec<SegmentRecord>,
        retained: bool,
    ) -> RenderRecord {
        RenderRecord {
            segments,
            color: self.color + background * self.transmittance,
            opacity: 1.0 - self.transmittance,
            weight_sum: self.weight_sum,
            depth_sum: self.depth_sum,
            background,
            final_transmittance: self.transmittance,
            retained,
        }
    }
}

/// Rendered image with per-pixel opacity and expected depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Framebuffer {
    pub width: u32,
    pub height: u32,
    pub color: Vec<Vec3>,
    pub opacity: Vec<f64>,
    pub depth: Vec<Option<f64>>,
}

impl Framebuffer {
    pub fn new(width: u32, height: u32, background: Vec3) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            color: vec![background; n],
            opacity: vec![0.0; n],
            depth: vec![None; n],
        }
    }

    pub fn index(&self, row: u32, col: u32) -> usize {
        row as usize * self.width as usize + col as usize
    }

    /// Mean absolute difference over pixels and channels.
    pub fn mean_l1(&self, other: &Framebuffer) -> f64 {
        let n = self.color.len().max(1) as f64;
        self.color
            .iter()
            .zip(&other.color)
            .map(|(a, b)| (a - b).abs().sum() / 3.0)
            .sum::<f64>()
            / n
    }
}
