//! Online learning under hidden task switches.

mod cmaml;
mod detector;
mod run;
mod stream;

pub use cmaml::{cmaml_step, cmaml_step_with, uniform_rates, OnlineState, OnlineStepRecord, SwitchDecision, TraceEvent};
pub use detector::{LrAdapt, SwitchDetector, STD_FLOOR};
pub use run::{initial_online_state, run_online, OnlineLearnerConfig, OnlineMethod, OnlineOutcome, TELEMETRY_COLUMNS};
pub use stream::{OnlineStep, OnlineStream, OnlineStreamConfig, OnlineTask};
