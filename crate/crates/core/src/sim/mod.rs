//! Deterministic planar tabletop simulator.
//!
//! Objects are upright cylinders pushed quasi-statically by a disk-shaped
//! gripper. A glancing contact topples an object when the lateral offset of
//! its center from the gripper's line of motion exceeds
//! `kappa * (base_radius / height) * radius`, so tall, narrow-based objects
//! fall easily while squat ones tolerate off-center pushes.

mod noise;
mod push;
mod render;
mod retime;
mod scene;

pub use noise::{add_sensor_noise, fill_holes, median3x3, postprocess_depth, DepthNoise};
pub use push::{ExecutionReport, PushParams, StepReport};
pub use render::{
    pixel_center, pixel_of, pointcloud_from_depth, render_depth, render_pointcloud, DepthImage, PointCloud,
    DEPTH_COLS, DEPTH_ROWS,
};
pub use retime::{retime_constant_speed, Trajectory, TrajectorySample, DEFAULT_RATE, DEFAULT_SPEED};
pub use scene::{randomize_scene, GripperState, RandomizationConfig, Scene, SceneObject, ShapeRange, TableSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("table bounds are degenerate or the camera is below the tallest object")]
    InvalidTable,
    #[error("object {0} has invalid geometry")]
    InvalidObject(u32),
    #[error("duplicate object id {0}")]
    DuplicateId(u32),
    #[error("standing object {0} lies outside the table")]
    OutsideTable(u32),
    #[error("scene must flag exactly one target, found {0}")]
    TargetCount(usize),
    #[error("gripper radius must be positive and its position finite")]
    InvalidGripper,
    #[error("invalid randomization config: {0}")]
    InvalidConfig(&'static str),
    #[error("could not place objects after {attempts} attempts")]
    PlacementFailed { attempts: usize },
    #[error("path has no points")]
    EmptyPath,
    #[error("path contains non-finite coordinates")]
    NonFinitePath,
    #[error("speed and rate must be positive and finite")]
    InvalidTiming,
}
