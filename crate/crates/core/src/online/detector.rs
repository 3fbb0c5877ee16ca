use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on the window standard deviation, so a flat window still has a threshold.
pub const STD_FLOOR: f64 = 1e-6;

/// Fires when the incoming loss exceeds `mean + λ · max(std, 1e-6)` of a full window of
/// recent losses. The window is cleared when it fires and otherwise slides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchDetector {
    window: VecDeque<f64>,
    size: usize,
    lambda: f64,
}

impl SwitchDetector {
    /// `lambda = f64::INFINITY` never fires.
    pub fn new(size: usize, lambda: f64) -> Result<Self> {
        if size == 0 {
            return Err(Error::field("detector_window", "must be at least 1"));
        }
        if !(lambda > 0.0) {
            return Err(Error::field("detector_lambda", "must be positive"));
        }
        Ok(Self {
            window: VecDeque::with_capacity(size),
            size,
            lambda,
        })
    }

    pub fn window(&self) -> impl Iterator<Item = &f64> {
        self.window.iter()
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.size
    }

    /// Whether `loss` fires, without changing the window.
    pub fn would_fire(&self, loss: f64) -> bool {
        if !self.is_full() {
            return false;
        }
        let n = self.window.len() as f64;
        let mean = self.window.iter().sum::<f64>() / n;
        let var = self.window.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        loss > mean + self.lambda * var.sqrt().max(STD_FLOOR)
    }

    pub fn observe(&mut self, loss: f64) -> bool {
        if self.would_fire(loss) {
            self.window.clear();
            return true;
        }
        if self.is_full() {
            self.window.pop_front();
        }
        self.window.push_back(loss);
        false
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }
}

/// The outer learning rate as a function of the validation loss after a detected switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LrAdapt {
    Constant { eta: f64 },
    /// `η = η_base · min(1, loss / L_ref)`, floored at `η_base · 1e-6`.
    LossProportional { eta_base: f64, l_ref: f64 },
}

impl LrAdapt {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrAdapt::Constant { eta } => eta > 0.0 && eta.is_finite(),
            LrAdapt::LossProportional { eta_base, l_ref } => {
                eta_base > 0.0 && eta_base.is_finite() && l_ref > 0.0 && l_ref.is_finite()
            }
        };
        if !ok {
            return Err(Error::field("eta", "outer learning rate and reference loss must be positive"));
        }
        Ok(())
    }

    pub fn eta(&self, validation_loss: f64) -> f64 {
        match *self {
            LrAdapt::Constant { eta } => eta,
            LrAdapt::LossProportional { eta_base, l_ref } => {
                let ratio = (validation_loss / l_ref).min(1.0);
                let ratio = if ratio.is_nan() { 1.0 } else { ratio };
                (eta_base * ratio).max(eta_base * 1e-6)
            }
        }
    }
}
