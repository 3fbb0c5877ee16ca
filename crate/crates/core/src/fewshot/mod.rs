//! Few-shot meta-learning: task families, masked inner loops and meta-training.

mod meta;
mod tasks;
mod train;

pub use meta::{evaluate_with_mask, inner_adapt, run_episode, EpisodeResult, FewShotMetrics, InnerResult, MaskState, MeanStd, MetaState, MetaStepStats};
pub use tasks::{ClusterSpec, Sinusoid, TaskData, TaskFamily, TaskSampler};
pub use train::{cross_domain_eval, meta_train, telemetry_columns, two_phase_trainer, BestSnapshot, MetaTrainer, TrainConfig, TrainerSnapshot};
