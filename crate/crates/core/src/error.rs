use thiserror::Error;

#[derive(Debug, Error)]
pub enum SalfError {
    #[error("invalid scene bounds: {0}")]
    InvalidBounds(String),
    #[error("voxel (level {level}, ijk {ijk:?}) lies outside the scene bounds")]
    VoxelOutOfBounds { level: u8, ijk: [i32; 3] },
    #[error("duplicate voxel at level {level}, ijk {ijk:?}")]
    DuplicateVoxel { level: u8, ijk: [i32; 3] },
    #[error("voxel (level {level}, ijk {ijk:?}) overlaps another stored voxel")]
    OverlappingVoxel { level: u8, ijk: [i32; 3] },
    #[error("voxel level {level} exceeds the maximum of {max_levels} levels")]
    LevelTooDeep { level: u8, max_levels: u8 },
    #[error("voxel edge {edge} is below the minimum supported edge {min_edge}")]
    VoxelTooSmall { edge: f64, min_edge: f64 },
    #[error("voxel budget of {budget} exceeded")]
    BudgetExceeded { budget: usize },
    #[error("point {0:?} lies outside the octree root cube")]
    PointOutsideRoot([f64; 3]),
    #[error("position {0:?} lies outside the box")]
    PointOutsideBox([f64; 3]),
    #[error("direction {0:?} is not unit length")]
    NonUnitDirection([f64; 3]),
    #[error("time {t} is outside the trajectory range [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid sensor model: {0}")]
    InvalidSensor(String),
    #[error("unsupported sensor for this renderer: {0}")]
    UnsupportedSensor(String),
    #[error("render records are missing or incomplete: {0}")]
    MissingRecords(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T, E = SalfError> = std::result::Result<T, E>;
