//! Multi-view contrastive pre-training.
//!
//! Each step encodes one randomly chosen view of an instant with the online
//! encoder `f` and every view with its own momentum copy `f̂`. All `α` keys
//! are positives; the FIFO bank (snapshotted before the step) supplies the
//! negatives. After the optimiser step on `f`, each `f̂` is pulled towards
//! `f` and the `α` keys are enqueued.

mod bank;
mod encoder;
mod loss;
mod pretrain;

pub use bank::{MemoryBank, UNIT_TOL};
pub use encoder::{Encoder, PROJECTION_PREFIX};
pub use loss::{info_nce, info_nce_value, momentum_update};
pub use pretrain::{
    export_encoder, pretrain, pretrain_epoch, sample_slices, EncoderPair, EpochStats,
    PretrainConfig, PretrainOutcome, SliceInstant, SliceSet,
};
