//! Linear octree over a [`SparseVoxelSet`].
//!
//! The buffer is a flat array of nodes. The root is node 0; an internal node
//! stores the offset of a contiguous block of 8 children; a leaf stores a
//! voxel index; an empty node stores `(-1, -1)`. The root cube is the
//! smallest power-of-two multiple of the level-0 edge that covers the scene
//! bounds, anchored at `aabb_min`, so every grid level nests exactly.

mod march;
mod slab;

pub use march::{march, march_with, RaySegment};
pub use slab::{ray_box_exit, ray_box_interval};

use std::fmt::Write as _;

use crate::error::{Result, SalfError};
use crate::math::Vec3;
use crate::scene::{SceneBounds, SparseVoxelSet, VoxelKey};

/// Step taken past each node exit while marching.
pub const MARCH_EPSILON: f64 = 1e-4;
/// Smallest voxel edge accepted anywhere (64 marching steps).
pub const MIN_VOXEL_EDGE: f64 = 64.0 * MARCH_EPSILON;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OctreeNode {
    pub id_or_offset: i32,
    /// 1 = leaf, 0 = internal, -1 = empty.
    pub is_leaf: i8,
}

impl OctreeNode {
    pub const EMPTY: OctreeNode = OctreeNode {
        id_or_offset: -1,
        is_leaf: -1,
    };

    pub fn is_empty(&self) -> bool {
        self.is_leaf == -1
    }
}

/// Octant of a point in the node's unit-normalized space: one bit per axis
/// at the 0.5 threshold, combined as `x + 2(y + 2z)`.
#[inline]
pub fn compute_child_index(p_local: &Vec3) -> usize {
    let bx = usize::from(p_local.x >= 0.5);
    let by = usize::from(p_local.y >= 0.5);
    let bz = usize::from(p_local.z >= 0.5);
    bx + 2 * (by + 2 * bz)
}

/// What a point query lands on, with the cube of that node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeHit {
    /// Voxel index, or `None` for empty space.
    pub voxel: Option<u32>,
    pub min: Vec3,
    pub edge: f64,
}

impl NodeHit {
    pub fn max(&self) -> Vec3 {
        self.min + Vec3::repeat(self.edge)
    }
}

#[derive(Clone, Debug)]
pub struct OctreeBuffer {
    nodes: Vec<OctreeNode>,
    root_min: Vec3,
    root_edge: f64,
    /// Tree depth of level-0 voxels.
    level_offset: u32,
}

impl OctreeBuffer {
    pub fn nodes(&self) -> &[OctreeNode] {
        &self.nodes
    }

    pub fn root_min(&self) -> Vec3 {
        self.root_min
    }

    pub fn root_edge(&self) -> f64 {
        self.root_edge
    }

    pub fn root_max(&self) -> Vec3 {
        self.root_min + Vec3::repeat(self.root_edge)
    }

    pub fn level_offset(&self) -> u32 {
        self.level_offset
    }

    /// Text table `index is_leaf id_or_offset`, one node per line.
    pub fn dump_table(&self) -> String {
        let mut s = String::from("index\tis_leaf\tid_or_offset\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{}\t{}", n.is_leaf, n.id_or_offset);
        }
        s
    }

    /// Descends from the root to the leaf or empty node containing `p`.
    pub fn query(&self, p: &Vec3) -> Result<NodeHit> {
        let mut u = (p - self.root_min) / self.root_edge;
        if !(0..3).all(|k| u[k] >= 0.0 && u[k] <= 1.0) {
            return Err(SalfError::PointOutsideRoot([p.x, p.y, p.z]));
        }
        Ok(self.descend(&mut u))
    }

    /// Query for a point already known to be inside the root cube; `u` is
    /// clamped to `[0, 1]`.
    pub(crate) fn query_clamped(&self, p: &Vec3) -> NodeHit {
        let mut u = (p - self.root_min) / self.root_edge;
        for k in 0..3 {
            u[k] = u[k].clamp(0.0, 1.0);
        }
        self.descend(&mut u)
    }

    fn descend(&self, u: &mut Vec3) -> NodeHit {
        let mut idx = 0usize;
        let mut min = self.root_min;
        let mut edge = self.root_edge;
        loop {
            let node = self.nodes[idx];
            match node.is_leaf {
                1 => {
                    return NodeHit {
                        voxel: Some(node.id_or_offset as u32),
                        min,
                        edge,
                    }
                }
                -1 => {
                    return NodeHit {
                        voxel: None,
                        min,
                        edge,
                    }
                }
                _ => {}
            }
            let child = compute_child_index(u);
            edge *= 0.5;
            for k in 0..3 {
                let bit = (child >> k) & 1;
                if bit == 1 {
                    min[k] += edge;
                }
                // Exact in binary floating point: scaling by 2 and removing
                // the integer part of a value in [0, 2].
                u[k] = (u[k] * 2.0 - bit as f64).min(1.0);
            }
            idx = node.id_or_offset as usize + child;
        }
    }
}

/// Builds the depth-first linear buffer for `voxels` within `bounds`.
pub fn build_octree(voxels: &SparseVoxelSet, bounds: &SceneBounds) -> Result<OctreeBuffer> {
    build_from_keys(&voxels.keys(), bounds)
}

/// Same as [`build_octree`] for a raw key list (which may contain the
/// duplicates and overlaps that a [`SparseVoxelSet`] rejects).
pub fn build_from_keys(keys: &[VoxelKey], bounds: &SceneBounds) -> Result<OctreeBuffer> {
    bounds.validate()?;
    let extent = (bounds.aabb_max - bounds.aabb_min).max();
    let mut level_offset = 0u32;
    let mut root_edge = bounds.base_edge;
    while root_edge < extent * (1.0 - 1e-12) {
        root_edge *= 2.0;
        level_offset += 1;
    }
    for &(level, ijk) in keys {
        if level >= bounds.max_levels {
            return Err(SalfError::LevelTooDeep {
                level,
                max_levels: bounds.max_levels,
            });
        }
        if !bounds.contains_cell(level, ijk) {
            return Err(SalfError::VoxelOutOfBounds { level, ijk });
        }
        let edge = bounds.edge_at(level);
        if edge < MIN_VOXEL_EDGE {
            return Err(SalfError::VoxelTooSmall {
                edge,
                min_edge: MIN_VOXEL_EDGE,
            });
        }
    }
    let mut builder = Builder {
        keys,
        nodes: vec![OctreeNode::EMPTY],
        level_offset,
    };
    let mut items: Vec<u32> = (0..keys.len() as u32).collect();
    builder.build_node(0, 0, &mut items)?;
    Ok(OctreeBuffer {
        nodes: builder.nodes,
        root_min: bounds.aabb_min,
        root_edge,
        level_offset,
    })
}

struct Builder<'a> {
    keys: &'a [VoxelKey],
    nodes: Vec<OctreeNode>,
    level_offset: u32,
}

impl Builder<'_> {
    fn depth_of(&self, item: u32) -> u32 {
        u32::from(self.keys[item as usize].0) + self.level_offset
    }

    fn child_of(&self, item: u32, depth: u32) -> usize {
        let (_, ijk) = self.keys[item as usize];
        let shift = self.depth_of(item) - depth - 1;
        let bit = |v: i32| ((v >> shift) & 1) as usize;
        bit(ijk[0]) + 2 * (bit(ijk[1]) + 2 * bit(ijk[2]))
    }

    fn build_node(&mut self, slot: usize, depth: u32, items: &mut [u32]) -> Result<()> {
        if items.is_empty() {
            self.nodes[slot] = OctreeNode::EMPTY;
            return Ok(());
        }
        if let Some(&at_node) = items.iter().find(|&&i| self.depth_of(i) == depth) {
            let (level, ijk) = self.keys[at_node as usize];
            if items.len() > 1 {
                let dup = items
                    .iter()
                    .filter(|&&i| self.keys[i as usize] == (level, ijk))
                    .count()
                    > 1;
                return Err(if dup {
                    SalfError::DuplicateVoxel { level, ijk }
                } else {
                    SalfError::OverlappingVoxel { level, ijk }
                });
            }
            self.nodes[slot] = OctreeNode {
                id_or_offset: at_node as i32,
                is_leaf: 1,
            };
            return Ok(());
        }
        let offset = self.nodes.len();
        self.nodes.extend(std::iter::repeat_n(OctreeNode::EMPTY, 8));
        self.nodes[slot] = OctreeNode {
            id_or_offset: offset as i32,
            is_leaf: 0,
        };
        items.sort_by_key(|&i| self.child_of(i, depth));
        let mut start = 0;
        for child in 0..8 {
            let mut end = start;
            while end < items.len() && self.child_of(items[end], depth) == child {
                end += 1;
            }
            self.build_node(offset + child, depth + 1, &mut items[start..end])?;
            start = end;
        }
        Ok(())
    }
}
