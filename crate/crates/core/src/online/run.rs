use serde::{Deserialize, Serialize};

use super::cmaml::{cmaml_step, uniform_rates, OnlineState};
use super::detector::{LrAdapt, SwitchDetector};
use super::stream::{OnlineStream, OnlineStreamConfig};
use crate::error::{Error, Result};
use crate::mask::{MaskKind, MaskParams};
use crate::metrics::MetricsTable;
use crate::nn::{init_mask_values, Mlp, ParamVector};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnlineMethod {
    /// Plain SGD on `φ`; no switch handling, `θ` unused.
    FineTuning,
    /// Switch-triggered meta-updates of `θ` with a fixed, all-on mask.
    CmamlFixed,
    /// As above with a meta-learned binary mask.
    SparseCmaml,
    /// As above with meta-learned rectified per-parameter rates.
    SparseReluCmaml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineLearnerConfig {
    pub method: OnlineMethod,
    pub alpha0: f64,
    pub gamma_m: f64,
    pub lr_adapt: LrAdapt,
    pub detector_window: usize,
    pub detector_lambda: f64,
    /// Initial fraction of frozen coordinates for the binary mask.
    pub init_sparsity: f64,
    /// Range of the uniform initial rates for the rectified mask.
    pub relu_init: (f64, f64),
}

impl Default for OnlineLearnerConfig {
    fn default() -> Self {
        Self {
            method: OnlineMethod::SparseCmaml,
            alpha0: 0.1,
            gamma_m: 0.1,
            lr_adapt: LrAdapt::LossProportional { eta_base: 0.1, l_ref: 2.0 },
            detector_window: 10,
            detector_lambda: 6.0,
            init_sparsity: 0.0,
            relu_init: (0.005, 0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineOutcome {
    /// Mean pre-update accuracy over all steps.
    pub cumulative_accuracy: f64,
    /// Per configured family; `None` if the family never appeared.
    pub per_family: Vec<(String, Option<f64>)>,
    pub true_switches: usize,
    pub detected_switches: usize,
    pub telemetry: MetricsTable,
    pub state: OnlineState,
}

pub const TELEMETRY_COLUMNS: [&str; 6] = ["task_id", "family", "pre_loss", "pre_accuracy", "switch_fired", "sparsity_overall"];

/// Builds the starting state for a method; `seed` drives mask initialisation and the
/// buffer split.
pub fn initial_online_state(net: &Mlp, theta: ParamVector, learner: &OnlineLearnerConfig, seed: u64) -> Result<OnlineState> {
    if !(learner.alpha0 > 0.0 && learner.alpha0.is_finite()) {
        return Err(Error::field("alpha0", "must be positive"));
    }
    let len = theta.len();
    let (mask, gamma_m, lambda) = match learner.method {
        OnlineMethod::FineTuning => (MaskParams::all_on(len, MaskKind::Binary, learner.alpha0)?, 0.0, f64::INFINITY),
        OnlineMethod::CmamlFixed => (MaskParams::all_on(len, MaskKind::Binary, learner.alpha0)?, 0.0, learner.detector_lambda),
        OnlineMethod::SparseCmaml => {
            let m = if learner.init_sparsity > 0.0 {
                MaskParams::new(init_mask_values(net.layout(), learner.init_sparsity, derive_seed(seed, 0))?, MaskKind::Binary, learner.alpha0)?
            } else {
                MaskParams::all_on(len, MaskKind::Binary, learner.alpha0)?
            };
            (m, learner.gamma_m, learner.detector_lambda)
        }
        OnlineMethod::SparseReluCmaml => {
            let (lo, hi) = learner.relu_init;
            if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
                return Err(Error::field("relu_init", "needs 0 <= lo <= hi"));
            }
            let values = uniform_rates(len, lo, hi, &mut seeded(derive_seed(seed, 0)));
            (MaskParams::new(values, MaskKind::Relu, learner.alpha0)?, learner.gamma_m, learner.detector_lambda)
        }
    };
    let detector = SwitchDetector::new(learner.detector_window, lambda)?;
    OnlineState::new(theta, mask, gamma_m, learner.lr_adapt, detector, derive_seed(seed, 1))
}

/// Runs the whole stream, recording pre-update metrics for every step.
pub fn run_online(net: &Mlp, state: OnlineState, stream: OnlineStreamConfig, stream_seed: u64) -> Result<OnlineOutcome> {
    let mut state = state;
    let mut stream = OnlineStream::new(stream, stream_seed)?;
    let n_families = stream.config().families.len();
    let mut fam_sum = vec![0.0; n_families];
    let mut fam_count = vec![0usize; n_families];
    let mut total = 0.0;
    let mut steps = 0usize;
    let mut true_switches = 0;
    let mut detected = 0;
    let mut telemetry = MetricsTable::new(TELEMETRY_COLUMNS.iter().map(|s| s.to_string()).collect());
    while let Some(step) = stream.next_step()? {
        let rec = cmaml_step(net, &mut state, &step.batch).map_err(|e| e.within(format!("step {}", step.t)))?;
        total += rec.pre_accuracy;
        steps += 1;
        fam_sum[step.family] += rec.pre_accuracy;
        fam_count[step.family] += 1;
        true_switches += step.switched as usize;
        detected += rec.switched as usize;
        let sparsity = state.mask.sparsity(net.layout())?.overall;
        telemetry.push(
            step.t as u64,
            vec![
                step.task_id as f64,
                step.family as f64,
                rec.pre_loss,
                rec.pre_accuracy,
                if rec.switched { 1.0 } else { 0.0 },
                sparsity,
            ],
        )?;
    }
    let per_family = (0..n_families)
        .map(|f| {
            let v = (fam_count[f] > 0).then(|| fam_sum[f] / fam_count[f] as f64);
            (stream.family_name(f).to_owned(), v)
        })
        .collect();
    Ok(OnlineOutcome {
        cumulative_accuracy: total / steps as f64,
        per_family,
        true_switches,
        detected_switches: detected,
        telemetry,
        state,
    })
}
