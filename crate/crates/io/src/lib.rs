//! Storage and ground truth for salf scenes: scene containers, dataset
//! directories, an analytic reference tracer for synthetic scenes, image
//! metrics and PPM/PNG/PLY emitters.

pub mod container;
pub mod dataset;
pub mod emit;
pub mod error;
pub mod metrics;
pub mod rig;
pub mod synthetic;

pub use container::{load_scene, save_scene, FORMAT_VERSION};
pub use dataset::{load_dataset, write_synthetic, Dataset, Split};
pub use emit::{read_image, write_image, Image};
pub use error::{IoError, Result};
pub use metrics::{mean_l1, median_range_error, psnr, ssim};
pub use rig::{NamedCamera, NamedLidar, SensorRig};
pub use synthetic::{make_synthetic, SyntheticData, SyntheticSpec};
