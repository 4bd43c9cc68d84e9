//! Named sensor rigs, stored alongside scenes and datasets.

use serde::{Deserialize, Serialize};

use salf_core::sensors::{CameraModel, LidarModel};

use crate::error::{IoError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedCamera {
    pub name: String,
    /// Capture time of the first row.
    pub time: f64,
    pub camera: CameraModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedLidar {
    pub name: String,
    /// Time of the first firing.
    pub time: f64,
    pub lidar: LidarModel,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorRig {
    #[serde(default)]
    pub cameras: Vec<NamedCamera>,
    #[serde(default)]
    pub lidars: Vec<NamedLidar>,
}

impl SensorRig {
    pub fn camera(&self, name: &str) -> Result<&NamedCamera> {
        self.cameras
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| IoError::Invalid(format!("no camera named {name:?}")))
    }

    pub fn lidar(&self, name: &str) -> Result<&NamedLidar> {
        self.lidars
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| IoError::Invalid(format!("no LiDAR named {name:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self
            .cameras
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.lidars.iter().map(|l| l.name.as_str()))
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(IoError::Invalid(format!("sensor name {:?} is used twice", w[0])));
        }
        for c in &self.cameras {
            c.camera.validate()?;
        }
        for l in &self.lidars {
            l.lidar.validate()?;
        }
        Ok(())
    }
}
