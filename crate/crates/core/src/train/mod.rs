//! Optimizers, the linear learning-rate schedule, bit-exact checkpoints,
//! and the training loop.

mod checkpoint;
mod optim;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adam_step, lr_at, lr_linear, sgd_step, AdamHyper, OptimizerKind, OptimizerState, SgdHyper};
pub use run::{train, EpochLog, Sample, TrainLog, TrainOptions};
