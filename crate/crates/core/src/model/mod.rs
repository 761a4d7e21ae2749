//! Network assembly, accounting and checkpoints.

pub mod accounting;
pub mod checkpoint;
mod config;
mod network;

pub use accounting::{
    attention_complexity, flops_count, param_breakdown, param_count, FlopReport, ParamReport,
    Tokenization,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LoadReport};
pub use config::{subsample_indices, ModelConfig, OutputMode};
pub use network::{forward_bound, Backbone, Fcn, NanoHtNet, RegressionHead, StreamFeatures};
