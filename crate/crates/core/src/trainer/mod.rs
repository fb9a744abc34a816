//! Training: checkpoint pool, epoch loops, loss weighting and schedules.

mod plan;
mod pool;
mod run;

pub use plan::{
    anneal_lambda_vec, auto_lambda, median, MotionTarget, Objective, StepRange, TargetSpec, TrainMode, TrainPlan,
};
pub use pool::{Batch, CheckpointPool, PoolEntry, MAX_AGE};
pub use run::{EpochMetrics, Trainer, FEATURE_SEED, PROBE_LAMBDA};
