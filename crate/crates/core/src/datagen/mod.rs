//! Synthetic multi-view motion: forward kinematics, pinhole cameras and the
//! `PSEQ1` dataset container.

mod camera;
mod dataset;
mod motion;

pub use camera::{
    camera_root_relative, flip_3d, horizontal_flip, project, CameraView, Mat3, Vec3,
    CAMERA_BLOCK_LEN,
};
pub use dataset::{
    generate_dataset, read_dataset, sequence_seed, write_dataset, Dataset, DatasetConfig,
    SequenceRecord, ViewRecord, CONSISTENCY_TOL, DATASET_MAGIC,
};
pub use motion::{
    default_bone_lengths, generate_motion, generate_world_motion, rest_root_height,
    world_positions, ActionPreset, SyntheticMotionConfig, WorldMotion, FRAME_RATE, MAX_JOINT_ANGLE,
};
