//! Dataset directories: posed images, depth maps and LiDAR sweeps.
//!
//! ```text
//! dataset.json          frame list with split, background and version
//! sensors.json          named sensor rig
//! images/<camera>.ppm
//! depth/<camera>.bin    f32 little-endian along-ray distance per pixel
//! ranges/<lidar>.bin    f32 little-endian range per firing
//! points.ply            LiDAR returns of the training frames
//! trajectory.json       sensor boxes of the training frames
//! ```
//!
//! Negative values in the `.bin` files mark rays without a return.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use salf_core::math::{Aabb, Vec3};
use salf_core::train::TrainData;

use crate::emit::{read_ply, read_ppm, write_ply, write_ppm, Image};
use crate::error::{io_err, json_err, IoError, Result};
use crate::rig::SensorRig;
use crate::synthetic::SyntheticData;

pub const DATASET_VERSION: &str = "salf.dataset.v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub camera: String,
    pub lidar: Option<String>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Index {
    version: String,
    background: [f64; 3],
    frames: Vec<Frame>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub rig: SensorRig,
    pub background: Vec3,
    pub frames: Vec<Frame>,
    pub images: Vec<Image>,
    pub depths: Vec<Vec<Option<f64>>>,
    /// One entry per frame; empty when the frame has no LiDAR.
    pub ranges: Vec<Vec<Option<f64>>>,
    pub points: Vec<Vec3>,
    pub trajectory: Vec<Aabb>,
}

pub fn encode_ranges(r: &[Option<f64>]) -> Vec<u8> {
    r.iter().flat_map(|v| (v.unwrap_or(-1.0) as f32).to_le_bytes()).collect()
}

pub fn decode_ranges(bytes: &[u8], expected: usize, path: &Path) -> Result<Vec<Option<f64>>> {
    if bytes.len() != expected * 4 {
        return Err(IoError::SizeMismatch {
            path: path.to_path_buf(),
            expected: (expected * 4) as u64,
            actual: bytes.len() as u64,
            detail: format!("{expected} f32 values"),
        });
    }
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if v.is_nan() {
                return Err(IoError::NonFinite {
                    path: path.to_path_buf(),
                    record: i,
                    field: "range".into(),
                });
            }
            Ok((v >= 0.0).then_some(f64::from(v)))
        })
        .collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(json_err(path))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(json_err(path))
}

/// Writes generated synthetic data as a dataset directory.
pub fn write_synthetic(dir: &Path, data: &SyntheticData) -> Result<()> {
    for sub in ["images", "depth", "ranges"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let mut frames = Vec::new();
    for (f, cam) in data.rig.cameras.iter().enumerate() {
        let lidar = data.rig.lidars.get(f);
        frames.push(Frame {
            camera: cam.name.clone(),
            lidar: lidar.map(|l| l.name.clone()),
            split: if data.test_frames.contains(&f) { Split::Test } else { Split::Train },
        });
        write_ppm(&data.images[f], &dir.join("images").join(format!("{}.ppm", cam.name)))?;
        write_bytes(&dir.join("depth").join(format!("{}.bin", cam.name)), &encode_ranges(&data.depths[f]))?;
        if let Some(l) = lidar {
            write_bytes(&dir.join("ranges").join(format!("{}.bin", l.name)), &encode_ranges(&data.ranges[f]))?;
        }
    }
    write_json(
        &dir.join("dataset.json"),
        &Index {
            version: DATASET_VERSION.into(),
            background: data.spec.background,
            frames,
        },
    )?;
    write_json(&dir.join("sensors.json"), &data.rig)?;
    write_json(&dir.join("spec.json"), &data.spec)?;
    write_ply(&data.points, &dir.join("points.ply"))?;
    write_json(&dir.join("trajectory.json"), &data.trajectory)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<Aabb>> {
    read_json(path)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let index: Index = read_json(&dir.join("dataset.json"))?;
    if index.version != DATASET_VERSION {
        return Err(IoError::UnknownVersion {
            found: index.version,
            expected: DATASET_VERSION.into(),
        });
    }
    let rig: SensorRig = read_json(&dir.join("sensors.json"))?;
    rig.validate()?;
    let mut ds = Dataset {
        rig,
        background: Vec3::from(index.background),
        frames: index.frames,
        images: Vec::new(),
        depths: Vec::new(),
        ranges: Vec::new(),
        points: read_ply(&dir.join("points.ply"))?,
        trajectory: read_trajectory(&dir.join("trajectory.json"))?,
    };
    for fr in &ds.frames {
        let cam = ds.rig.camera(&fr.camera)?;
        let img = read_ppm(&dir.join("images").join(format!("{}.ppm", fr.camera)))?;
        if (img.width, img.height) != (cam.camera.width, cam.camera.height) {
            return Err(IoError::ShapeMismatch(format!("image of {} does not match its camera", fr.camera)));
        }
        let dpath = dir.join("depth").join(format!("{}.bin", fr.camera));
        let bytes = fs::read(&dpath).map_err(io_err(&dpath))?;
        ds.depths.push(decode_ranges(&bytes, img.pixels.len(), &dpath)?);
        ds.images.push(img);
        match &fr.lidar {
            Some(name) => {
                let n = ds.rig.lidar(name)?.lidar.ray_count();
                let p = dir.join("ranges").join(format!("{name}.bin"));
                let bytes = fs::read(&p).map_err(io_err(&p))?;
                ds.ranges.push(decode_ranges(&bytes, n, &p)?);
            }
            None => ds.ranges.push(Vec::new()),
        }
    }
    Ok(ds)
}

impl Dataset {
    pub fn frames_in(&self, split: Split) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].split == split).collect()
    }

    /// Training rays and targets of the given frames.
    pub fn train_data(&self, frames: &[usize]) -> Result<TrainData> {
        let mut data = TrainData::new();
        for &f in frames {
            let fr = &self.frames[f];
            let cam = self.rig.camera(&fr.camera)?;
            data.add_camera(&cam.camera, cam.time, &self.images[f].pixels)?;
            if let Some(name) = &fr.lidar {
                let l = self.rig.lidar(name)?;
                data.add_lidar(&l.lidar, l.time, &self.ranges[f])?;
            }
        }
        Ok(data)
    }
}
