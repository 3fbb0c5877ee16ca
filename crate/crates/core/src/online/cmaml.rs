use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::detector::{LrAdapt, SwitchDetector};
use crate::error::{Error, Result};
use crate::mask::{mask_update_direction, MaskParams};
use crate::nn::{check_len, Batch, Mlp, ParamVector};
use crate::rng::{seeded, StdRng};

/// Order of operations inside [`cmaml_step`], recorded when tracing is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    Evaluate,
    PhiStep,
    MaskUpdate,
    ThetaUpdate,
    BufferReset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineState {
    pub phi: ParamVector,
    pub theta: ParamVector,
    pub mask: MaskParams,
    pub gamma_m: f64,
    pub lr_adapt: LrAdapt,
    pub detector: SwitchDetector,
    /// Batches seen since the last detected switch.
    pub buffer: Vec<Batch>,
    rng: StdRng,
    pub trace: Option<Vec<TraceEvent>>,
}

/// Result of one online step. Loss and accuracy are measured on the incoming batch
/// before any update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineStepRecord {
    pub pre_loss: f64,
    pub pre_accuracy: f64,
    /// The detector fired and the buffer held data, so the meta-update ran.
    pub switched: bool,
    /// Outer learning rate used, when the meta-update ran.
    pub eta: Option<f64>,
}

/// Overrides the detector, for scripted switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchDecision {
    Detect,
    Force(bool),
}

impl OnlineState {
    /// Starts with `φ = θ` and an empty buffer.
    pub fn new(
        theta: ParamVector,
        mask: MaskParams,
        gamma_m: f64,
        lr_adapt: LrAdapt,
        detector: SwitchDetector,
        seed: u64,
    ) -> Result<Self> {
        check_len(theta.len(), mask.len())?;
        lr_adapt.validate()?;
        if !(gamma_m >= 0.0 && gamma_m.is_finite()) {
            return Err(Error::field("gamma_m", "must be non-negative"));
        }
        Ok(Self {
            phi: theta.clone(),
            theta,
            mask,
            gamma_m,
            lr_adapt,
            detector,
            buffer: Vec::new(),
            rng: seeded(seed),
            trace: None,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    fn log(&mut self, e: TraceEvent) {
        if let Some(t) = &mut self.trace {
            t.push(e);
        }
    }

    /// Buffered batches split at random into an adaptation half and a validation half.
    fn split_buffer(&mut self) -> Result<(Batch, Batch)> {
        let mut all = self.buffer[0].clone();
        for b in &self.buffer[1..] {
            all = all.concat(b)?;
        }
        let mut idx: Vec<usize> = (0..all.len()).collect();
        idx.shuffle(&mut self.rng);
        if idx.len() == 1 {
            return Ok((all.clone(), all));
        }
        let half = idx.len() / 2;
        Ok((all.select(&idx[..half])?, all.select(&idx[half..])?))
    }
}

pub fn cmaml_step(net: &Mlp, state: &mut OnlineState, batch: &Batch) -> Result<OnlineStepRecord> {
    cmaml_step_with(net, state, batch, SwitchDecision::Detect)
}

/// One step: evaluate `φ` on the batch, then either take a masked step on `φ` and buffer
/// the batch, or (on a switch) meta-update `θ` and `m` from the buffer, clear it and
/// restart `φ` from `θ` with one masked step on the batch.
pub fn cmaml_step_with(net: &Mlp, state: &mut OnlineState, batch: &Batch, decision: SwitchDecision) -> Result<OnlineStepRecord> {
    if batch.is_empty() {
        return Err(Error::Precondition("incoming batch is empty".into()));
    }
    let (pre_loss, acc) = net.evaluate(&state.phi, batch)?;
    state.log(TraceEvent::Evaluate);
    let fired = match decision {
        SwitchDecision::Detect => state.detector.observe(pre_loss),
        SwitchDecision::Force(f) => {
            if f {
                state.detector.reset();
            }
            f
        }
    };
    let pre_accuracy = acc.unwrap_or(0.0);

    if !fired || state.buffer.is_empty() {
        let (_, g) = net.loss_and_grad(&state.phi, batch)?;
        state.phi.sub_assign(&state.mask.apply_mask(&g)?)?;
        state.phi.check_finite("phi")?;
        state.log(TraceEvent::PhiStep);
        state.buffer.push(batch.clone());
        return Ok(OnlineStepRecord {
            pre_loss,
            pre_accuracy,
            switched: false,
            eta: None,
        });
    }

    let (train, val) = state.split_buffer()?;
    let (_, g_in) = net.loss_and_grad(&state.theta, &train)?;
    let phi = state.theta.sub(&state.mask.apply_mask(&g_in)?)?;
    let (val_loss, g_out) = net.loss_and_grad(&phi, &val)?;
    let eta = state.lr_adapt.eta(val_loss);
    let direction = mask_update_direction(&g_out, &g_in)?;
    state.mask.update(&direction, state.gamma_m)?;
    state.log(TraceEvent::MaskUpdate);
    let mut step = g_out;
    step.scale(eta);
    state.theta.sub_assign(&step)?;
    state.theta.check_finite("theta")?;
    state.log(TraceEvent::ThetaUpdate);
    state.buffer.clear();
    state.log(TraceEvent::BufferReset);
    let (_, g) = net.loss_and_grad(&state.theta, batch)?;
    state.phi = state.theta.sub(&state.mask.apply_mask(&g)?)?;
    state.phi.check_finite("phi")?;
    state.log(TraceEvent::PhiStep);
    Ok(OnlineStepRecord {
        pre_loss,
        pre_accuracy,
        switched: true,
        eta: Some(eta),
    })
}

/// Draws relu-kind mask values uniformly from `[lo, hi]`.
pub fn uniform_rates<R: Rng + ?Sized>(len: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..=hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskKind;
    use crate::nn::{Activation, LossKind, Matrix};

    fn quad_net() -> Mlp {
        Mlp::new(vec![1, 1], Activation::Identity, LossKind::Mse, false).unwrap()
    }

    fn point(x: f64, y: f64) -> Batch {
        Batch::regression(Matrix::new(1, 1, vec![x]).unwrap(), Matrix::new(1, 1, vec![y]).unwrap()).unwrap()
    }

    fn state(net: &Mlp, theta: f64, lambda: f64) -> OnlineState {
        let theta = ParamVector::new(vec![theta], net.layout().clone()).unwrap();
        let mask = MaskParams::all_on(1, MaskKind::Binary, 0.5).unwrap();
        OnlineState::new(theta, mask, 0.0, LrAdapt::Constant { eta: 0.1 }, SwitchDetector::new(2, lambda).unwrap(), 0).unwrap()
    }

    #[test]
    fn never_firing_is_masked_fine_tuning() {
        let net = quad_net();
        let mut s = state(&net, 1.0, f64::INFINITY);
        let mut phi = 1.0f64;
        for i in 0..20 {
            let b = point(1.0, (i % 3) as f64);
            let rec = cmaml_step(&net, &mut s, &b).unwrap();
            assert!(!rec.switched);
            phi -= 0.5 * (phi - (i % 3) as f64);
            assert_eq!(s.phi.values()[0], phi);
        }
        assert_eq!(s.theta.values(), &[1.0]);
    }

    #[test]
    fn scripted_switch_theta_update() {
        let net = quad_net();
        let mut s = state(&net, 1.0, 3.0);
        // One buffered point at x = 1, y = 0: both halves are that point.
        cmaml_step_with(&net, &mut s, &point(1.0, 0.0), SwitchDecision::Force(false)).unwrap();
        let rec = cmaml_step_with(&net, &mut s, &point(1.0, 2.0), SwitchDecision::Force(true)).unwrap();
        assert!(rec.switched);
        // φ = 1 − 0.5·1 = 0.5 and ∇L(φ, R^v) = 0.5.
        let theta = 1.0 - 0.1 * 0.5;
        assert_eq!(s.theta.values(), &[theta]);
        assert!(s.buffer.is_empty());
        // φ restarts from θ with one step on the new batch: g = 0.95 − 2.
        assert_eq!(s.phi.values(), &[theta - 0.5 * (theta - 2.0)]);
    }

    #[test]
    fn switch_on_empty_buffer_falls_through() {
        let net = quad_net();
        let mut s = state(&net, 1.0, 3.0);
        let rec = cmaml_step_with(&net, &mut s, &point(1.0, 0.0), SwitchDecision::Force(true)).unwrap();
        assert!(!rec.switched);
        assert_eq!(s.buffer.len(), 1);
        assert_eq!(s.theta.values(), &[1.0]);
    }

    #[test]
    fn evaluation_precedes_updates() {
        let net = quad_net();
        let mut s = state(&net, 1.0, 3.0);
        s.enable_trace();
        let rec = cmaml_step(&net, &mut s, &point(1.0, 3.0)).unwrap();
        assert_eq!(rec.pre_loss, 0.5 * 4.0);
        cmaml_step_with(&net, &mut s, &point(1.0, 3.0), SwitchDecision::Force(true)).unwrap();
        let trace = s.trace.clone().unwrap();
        assert_eq!(
            trace,
            vec![
                TraceEvent::Evaluate,
                TraceEvent::PhiStep,
                TraceEvent::Evaluate,
                TraceEvent::MaskUpdate,
                TraceEvent::ThetaUpdate,
                TraceEvent::BufferReset,
                TraceEvent::PhiStep
            ]
        );
    }

    #[test]
    fn frozen_coordinates_do_not_move() {
        let net = Mlp::new(vec![2, 2], Activation::Identity, LossKind::Mse, true).unwrap();
        let theta = ParamVector::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], net.layout().clone()).unwrap();
        let mask = MaskParams::new(vec![-1.0, 1.0, -1.0, 1.0, -1.0, 1.0], MaskKind::Binary, 0.3).unwrap();
        let mut s = OnlineState::new(theta, mask, 0.0, LrAdapt::Constant { eta: 0.1 }, SwitchDetector::new(3, 2.0).unwrap(), 1).unwrap();
        let b = Batch::regression(Matrix::new(1, 2, vec![1.0, -1.0]).unwrap(), Matrix::new(1, 2, vec![2.0, 0.0]).unwrap()).unwrap();
        for _ in 0..5 {
            let before = s.phi.clone();
            cmaml_step(&net, &mut s, &b).unwrap();
            for i in [0, 2, 4] {
                assert_eq!(s.phi.values()[i], before.values()[i]);
            }
        }
    }
}
