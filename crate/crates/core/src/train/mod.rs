//! Losses, metrics, optimisation, supervised training and benchmarking.

mod bench;
mod metrics;
mod optim;
mod trainer;

pub use bench::{bench_dtst_attention, bench_model, BenchReport, DtstProbe};
pub use metrics::{
    mpjpe, mpjpe_loss, mpjpe_per_frame, p_mpjpe, p_mpjpe_detailed, procrustes_align, AlignedError,
};
pub use optim::{Adam, AdamConfig};
pub use trainer::{
    build_samples, evaluate, per_joint_errors, temporal_mean_baseline, train, train_step, EpochLog,
    EvalReport, Metrics, RunReport, Sample, TrainConfig, TrainOutcome,
};
