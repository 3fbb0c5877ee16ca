//! Config files, experiment runs, metrics files and checkpoints.

mod checkpoint;
mod config;
mod run;

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint, CheckpointPayload, CHECKPOINT_VERSION};
pub use config::{
    apply_override, load_config, parse_config, ArchConfig, ContinualSection, ExperimentConfig, FewshotConfig, MaskConfig, MaskInit,
    OnlineSection, OutputConfig, Regime, Seeds, ShiftConfig,
};
pub use run::{
    build_net, checkpoint_path, evaluate_checkpoint, resume_experiment, run_experiment, RunSummary, CHECKPOINT_FILE, EVAL_FILE, MATRIX_FILE,
    METRICS_FILE, SPARSITY_FILE, SUMMARY_FILE,
};
