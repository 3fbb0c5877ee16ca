use serde::{Deserialize, Serialize};

use super::layout::{check_aligned, GradVector, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Adam with the usual defaults (β1 = 0.9, β2 = 0.999, ε = 1e-8).
    pub fn adam(lr: f64, len: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr),
            OptimizerKind::Adam => Self::adam(lr, len),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Descends `params` along `grad` and advances the step counter.
    pub fn step(&mut self, params: &mut ParamVector, grad: &GradVector) -> Result<()> {
        check_aligned(params.len(), grad.len())?;
        if !grad.is_finite() {
            return Err(Error::numerical("optimizer", "non-finite gradient"));
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.values_mut().iter_mut().zip(grad.values()) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                check_aligned(self.first_moment.len(), grad.len())?;
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (((p, g), m), v) in params
                    .values_mut()
                    .iter_mut()
                    .zip(grad.values())
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        params.check_finite("optimizer step")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layout::{GroupKind, LayerLayout};
    use std::sync::Arc;

    fn params(values: Vec<f64>) -> ParamVector {
        let n = values.len();
        let layout = Arc::new(LayerLayout::from_shapes([("w", GroupKind::Weight, n, 1)]).unwrap());
        ParamVector::new(values, layout).unwrap()
    }

    #[test]
    fn sgd_step() {
        let mut p = params(vec![1.0]);
        let mut opt = OptimizerState::sgd(0.1);
        opt.step(&mut p, &GradVector::new(vec![2.0])).unwrap();
        assert!((p.values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for &scale in &[1e-3, 1.0, 1e3] {
            let mut p = params(vec![0.0, 0.0]);
            let mut opt = OptimizerState::adam(0.01, 2);
            opt.step(&mut p, &GradVector::new(vec![scale, -scale])).unwrap();
            // closed form: lr * g / (|g| + eps)
            let expected = 0.01 * scale / (scale + 1e-8);
            assert!((p.values()[0] + expected).abs() < 1e-15);
            assert!((p.values()[1] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut p = params(vec![0.3, -0.7]);
        let mut opt = OptimizerState::adam(0.01, 2);
        opt.step(&mut p, &GradVector::zeros(2)).unwrap();
        assert_eq!(p.values(), &[0.3, -0.7]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn adam_moments_decay_on_zero_grad() {
        let mut p = params(vec![0.0]);
        let mut opt = OptimizerState::adam(0.01, 1);
        opt.step(&mut p, &GradVector::new(vec![1.0])).unwrap();
        let m1 = opt.first_moment()[0];
        opt.step(&mut p, &GradVector::zeros(1)).unwrap();
        assert_eq!(opt.first_moment()[0], 0.9 * m1);
    }

    #[test]
    fn non_finite_grad_rejected() {
        let mut p = params(vec![0.0]);
        let mut opt = OptimizerState::sgd(0.1);
        assert!(opt.step(&mut p, &GradVector::new(vec![f64::NAN])).is_err());
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn zero_lr_is_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = params(vec![0.25, -3.5]);
            let mut opt = OptimizerState::new(kind, 0.0, 2);
            for _ in 0..5 {
                opt.step(&mut p, &GradVector::new(vec![1.5, -0.5])).unwrap();
            }
            assert_eq!(p.values(), &[0.25, -3.5]);
        }
    }
}
