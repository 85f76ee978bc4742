//! Training regimen: decoupled weight decay with selective application,
//! warmup/decay schedule, gradual unfreezing, discriminative learning rates,
//! label-smoothing cross-entropy, and cross-validated evaluation.

mod adamw;
pub mod cv;
mod loss;
mod model;
mod run;
mod schedule;

pub use adamw::{build_param_groups, AdamW, DecayClass, OptimizerConfig, ParamGroupEntry, ParamGroups};
pub use cv::{cross_validate, CvReport, FoldArtifacts, FoldPipeline, FoldResult};
pub use loss::{label_smoothing_ce, SmoothingLossConfig};
pub use model::{ModelBatch, NeuralModel};
pub use run::{train, EpochRecord, StepRecord, TrainHistory};
pub use schedule::{
    lr_at, unfreeze_step, DiscriminativeLrMap, UnfreezeSchedule, LR_DECAY_XI, WARMUP_FRACTION,
};
