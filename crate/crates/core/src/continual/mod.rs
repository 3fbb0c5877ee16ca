//! Continual learning on task streams with a replay memory.

mod lamaml;
mod reservoir;
mod run;
mod stream;

pub use lamaml::{la_maml_step, sparse_la_maml_step, LearningRateVector, LookAheadOutcome};
pub use reservoir::ReservoirBuffer;
pub use run::{continual_metrics, run_stream, AccuracyMatrix, ContinualMethod, ContinualMetrics, LearnerConfig, StreamOutcome};
pub use stream::{examples_to_batch, Example, StreamConfig, StreamKind, StreamTask, TaskStream};
