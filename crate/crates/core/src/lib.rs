//! Dual-stream 2D-to-3D human pose lifting.
//!
//! A spatial stream mixes joint tokens embedded from whole 2D trajectories;
//! a temporal stream mixes low-frequency DCT coefficient tokens. Both run on
//! a small tape-based autodiff engine so models can be trained and
//! gradient-checked without external ML frameworks.

pub mod datagen;
pub mod error;
pub mod frequency;
pub mod mixers;
pub mod model;
pub mod param;
pub mod pose;
pub mod poseclr;
pub mod skeleton;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, NanoHtNet, OutputMode};
pub use param::{ParamId, ParamStore};
pub use pose::PoseSequence;
pub use skeleton::SkeletonTopology;
pub use tensor::{Real, Tape, Tensor, Var};
