//! Scene container directories.
//!
//! ```text
//! meta.json      bounds, grid, density mode, counts, format version
//! voxels.bin     static voxels, fixed little-endian records
//! actors.json    actor ids, extents, grids and trajectories
//! actor_<id>.bin actor voxels, same record layout
//! sensors.json   named camera and LiDAR rigs
//! ```
//!
//! A voxel record is `u8 level, 3 x i32 ijk, 25 x f32 fields, 2 x f32
//! (log a, log b)`; fields are `w_s[4]`, `w_c` row-major, `w_sh` row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use salf_core::math::{Aabb, Vec3};
use salf_core::scene::{Actor, DensityMode, Keyframe, Scene, SceneBounds, SparseVoxelSet, VoxelParams, PARAM_COUNT};

use crate::error::{io_err, json_err, IoError, Result};
use crate::rig::SensorRig;

pub const FORMAT_VERSION: &str = "salf.v1";
/// Bytes per voxel record.
pub const RECORD_SIZE: usize = 1 + 3 * 4 + PARAM_COUNT * 4;

const FIELD_NAMES: [&str; PARAM_COUNT] = [
    "w_s[0]", "w_s[1]", "w_s[2]", "w_s[3]", "w_c[0][0]", "w_c[0][1]", "w_c[0][2]", "w_c[1][0]", "w_c[1][1]",
    "w_c[1][2]", "w_c[2][0]", "w_c[2][1]", "w_c[2][2]", "w_sh[0][0]", "w_sh[0][1]", "w_sh[0][2]", "w_sh[0][3]",
    "w_sh[1][0]", "w_sh[1][1]", "w_sh[1][2]", "w_sh[1][3]", "w_sh[2][0]", "w_sh[2][1]", "w_sh[2][2]",
    "w_sh[2][3]", "log_a", "log_b",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    version: String,
    aabb_min: [f64; 3],
    aabb_max: [f64; 3],
    base_edge: f64,
    max_levels: u8,
    density_mode: DensityMode,
    voxel_count: usize,
    budget: usize,
    actor_count: usize,
    #[serde(default)]
    inner_region: Option<Aabb>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ActorMeta {
    id: u32,
    extents: [f64; 3],
    base_edge: f64,
    max_levels: u8,
    budget: usize,
    voxel_count: usize,
    trajectory: Vec<Keyframe>,
}

/// Serializes a voxel set into fixed-size records. Fails on parameters that
/// are not finite in single precision.
pub fn encode_voxels(set: &SparseVoxelSet, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(set.len() * RECORD_SIZE);
    for (i, (g, p)) in set.geoms().iter().zip(set.params()).enumerate() {
        out.push(g.level);
        for c in g.ijk {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for (k, v) in p.to_flat().iter().enumerate() {
            let f = *v as f32;
            if !f.is_finite() {
                return Err(IoError::NonFinite {
                    path: path.to_path_buf(),
                    record: i,
                    field: FIELD_NAMES[k].into(),
                });
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses voxel records and rebuilds the set, checking every insertion
/// invariant against `bounds`.
pub fn decode_voxels(
    bytes: &[u8],
    expected: usize,
    bounds: &SceneBounds,
    budget: usize,
    path: &Path,
) -> Result<SparseVoxelSet> {
    let want = (expected * RECORD_SIZE) as u64;
    if bytes.len() as u64 != want {
        return Err(IoError::SizeMismatch {
            path: path.to_path_buf(),
            expected: want,
            actual: bytes.len() as u64,
            detail: format!("{expected} records of {RECORD_SIZE} bytes"),
        });
    }
    let mut keys = Vec::with_capacity(expected);
    let mut params = Vec::with_capacity(expected);
    for (i, rec) in bytes.chunks_exact(RECORD_SIZE).enumerate() {
        let level = rec[0];
        let int = |o: usize| i32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        keys.push((level, [int(1), int(5), int(9)]));
        let mut flat = [0.0; PARAM_COUNT];
        for (k, v) in flat.iter_mut().enumerate() {
            let o = 13 + 4 * k;
            let f = f32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
            if !f.is_finite() {
                return Err(IoError::NonFinite {
                    path: path.to_path_buf(),
                    record: i,
                    field: FIELD_NAMES[k].into(),
                });
            }
            *v = f64::from(f);
        }
        params.push(VoxelParams::from_flat(&flat));
    }
    SparseVoxelSet::from_parts(bounds, &keys, params, budget).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

fn actor_file(dir: &Path, id: u32) -> PathBuf {
    dir.join(format!("actor_{id}.bin"))
}

/// Writes `scene` and `sensors` into `dir`, creating it if needed.
pub fn save_scene(dir: &Path, scene: &Scene, sensors: &SensorRig) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let b = &scene.bounds;
    let meta = Meta {
        version: FORMAT_VERSION.into(),
        aabb_min: b.aabb_min.into(),
        aabb_max: b.aabb_max.into(),
        base_edge: b.base_edge,
        max_levels: b.max_levels,
        density_mode: scene.density_mode,
        voxel_count: scene.voxels.len(),
        budget: scene.voxels.budget(),
        actor_count: scene.actors.len(),
        inner_region: scene.inner_region,
    };
    let vpath = dir.join("voxels.bin");
    let bytes = encode_voxels(&scene.voxels, &vpath)?;
    let mut actors = Vec::with_capacity(scene.actors.len());
    let mut actor_bytes = Vec::with_capacity(scene.actors.len());
    for a in &scene.actors {
        if actors.iter().any(|m: &ActorMeta| m.id == a.id) {
            return Err(IoError::Invalid(format!("actor id {} is used twice", a.id)));
        }
        actors.push(ActorMeta {
            id: a.id,
            extents: a.extents.into(),
            base_edge: a.bounds.base_edge,
            max_levels: a.bounds.max_levels,
            budget: a.voxels.budget(),
            voxel_count: a.voxels.len(),
            trajectory: a.trajectory.clone(),
        });
        let p = actor_file(dir, a.id);
        actor_bytes.push((encode_voxels(&a.voxels, &p)?, p));
    }
    write_json(&dir.join("meta.json"), &meta)?;
    fs::write(&vpath, bytes).map_err(io_err(&vpath))?;
    write_json(&dir.join("actors.json"), &actors)?;
    for (bytes, p) in actor_bytes {
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    write_json(&dir.join("sensors.json"), sensors)
}

/// Reads a container written by [`save_scene`].
pub fn load_scene(dir: &Path) -> Result<(Scene, SensorRig)> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = read_json(&meta_path)?;
    if meta.version != FORMAT_VERSION {
        return Err(IoError::UnknownVersion {
            found: meta.version,
            expected: FORMAT_VERSION.into(),
        });
    }
    let bounds = SceneBounds::new(
        Vec3::from(meta.aabb_min),
        Vec3::from(meta.aabb_max),
        meta.base_edge,
        meta.max_levels,
    )
    .map_err(|e| IoError::Format {
        path: meta_path.clone(),
        message: e.to_string(),
    })?;
    let vpath = dir.join("voxels.bin");
    let bytes = fs::read(&vpath).map_err(io_err(&vpath))?;
    let mut scene = Scene::new(bounds, meta.budget);
    scene.voxels = decode_voxels(&bytes, meta.voxel_count, &bounds, meta.budget, &vpath)?;
    scene.density_mode = meta.density_mode;
    scene.inner_region = meta.inner_region;

    let apath = dir.join("actors.json");
    let actors: Vec<ActorMeta> = read_json(&apath)?;
    if actors.len() != meta.actor_count {
        return Err(IoError::Format {
            path: apath,
            message: format!("meta.json lists {} actors, actors.json {}", meta.actor_count, actors.len()),
        });
    }
    for m in actors {
        let mut actor = Actor::new(m.id, Vec3::from(m.extents), m.base_edge, m.max_levels, m.trajectory, m.budget)
            .map_err(|e| IoError::Format {
                path: apath.clone(),
                message: format!("actor {}: {e}", m.id),
            })?;
        let p = actor_file(dir, m.id);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        actor.voxels = decode_voxels(&bytes, m.voxel_count, &actor.bounds, m.budget, &p)?;
        scene.actors.push(actor);
    }
    let sensors: SensorRig = read_json(&dir.join("sensors.json"))?;
    Ok((scene, sensors))
}
