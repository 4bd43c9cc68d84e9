//! Sparse local-field voxel scenes.
//!
//! A scene is a sparse, multi-level grid of cubes. Each cube carries small
//! linear fields for signed distance, color and view dependence. Scenes can
//! be rendered by octree ray marching ([`render::ray`]) or by tile-based
//! rasterization ([`render::raster`]), and optimized from images and LiDAR
//! ([`train`]).

pub mod error;
pub mod math;
pub mod octree;
pub mod render;
pub mod scene;
pub mod sensors;
pub mod train;

pub use error::{Result, SalfError};
