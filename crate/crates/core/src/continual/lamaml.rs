//! Look-ahead meta-learning steps for streams: per-parameter learning rates and the
//! binary-mask variant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{mask_update_direction, MaskKind, MaskParams};
use crate::nn::{check_len, Batch, GradVector, Mlp, ParamVector};

/// Meta-learned per-parameter learning rates; the effective rate is `max(α, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRateVector {
    alpha: Vec<f64>,
    pub straight_through: bool,
    pub gamma: f64,
}

impl LearningRateVector {
    pub fn new(alpha: Vec<f64>, straight_through: bool, gamma: f64) -> Result<Self> {
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::numerical("learning rates", "non-finite entry"));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::structural(format!("learning-rate meta step must be non-negative, got {gamma}")));
        }
        Ok(Self {
            alpha,
            straight_through,
            gamma,
        })
    }

    pub fn uniform(len: usize, alpha0: f64, straight_through: bool, gamma: f64) -> Result<Self> {
        Self::new(vec![alpha0; len], straight_through, gamma)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_mut(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `(α)₊ ∘ g`.
    pub fn scale(&self, grad: &GradVector) -> Result<GradVector> {
        check_len(self.len(), grad.len())?;
        Ok(GradVector::new(
            self.alpha
                .iter()
                .zip(grad.values())
                .map(|(&a, &g)| if a > 0.0 { a * g } else { 0.0 })
                .collect(),
        ))
    }

    /// `α += γ · gate ∘ d`, where the gate is `1[α ≥ 0]` unless straight-through is on.
    pub fn update(&mut self, direction: &GradVector) -> Result<()> {
        check_len(self.len(), direction.len())?;
        if !direction.is_finite() {
            return Err(Error::numerical("learning-rate update", "non-finite direction"));
        }
        for (a, d) in self.alpha.iter_mut().zip(direction.values()) {
            if self.straight_through || *a >= 0.0 {
                *a += self.gamma * d;
            }
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::numerical("learning-rate update", "non-finite learning rate"));
        }
        Ok(())
    }

    /// The rates viewed as a rectified mask, for sparsity reporting.
    pub fn as_mask(&self) -> Result<MaskParams> {
        MaskParams::new(self.alpha.clone(), MaskKind::Relu, 1.0)
    }
}

/// What one look-ahead step did.
#[derive(Debug, Clone, PartialEq)]
pub struct LookAheadOutcome {
    /// Loss on `B ∪ R` at the adapted parameters.
    pub outer_loss: f64,
    /// `g_out ∘ Σ g_in` used for the rate or mask update.
    pub direction: GradVector,
    /// Row of `B` used by each inner step, in order.
    pub inner_rows: Vec<usize>,
}

fn outer_batch(batch: &Batch, replay: Option<&Batch>) -> Result<Batch> {
    match replay {
        Some(r) if !r.is_empty() => batch.concat(r),
        _ => Ok(batch.clone()),
    }
}

fn check_batch(batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Precondition("incoming batch is empty".into()));
    }
    Ok(())
}

/// One step with meta-learned rates: one inner step per example of `B` using the gradient
/// at the pre-step parameters, then the rate update, then `θ ← θ − (α)₊ ∘ g_out` with the
/// new rates. `g_out` is the gradient on `B ∪ R` at the adapted parameters.
pub fn la_maml_step(
    net: &Mlp,
    theta: &mut ParamVector,
    lr: &mut LearningRateVector,
    batch: &Batch,
    replay: Option<&Batch>,
) -> Result<LookAheadOutcome> {
    check_batch(batch)?;
    check_len(theta.len(), lr.len())?;
    let mut phi = theta.clone();
    let mut inner_sum = GradVector::zeros(theta.len());
    let mut inner_rows = Vec::with_capacity(batch.len());
    for k in 0..batch.len() {
        let sample = batch.select(&[k])?;
        let (_, g) = net.loss_and_grad(&phi, &sample)?;
        inner_sum.add_assign(&g)?;
        phi.sub_assign(&lr.scale(&g)?)?;
        inner_rows.push(k);
    }
    let outer = outer_batch(batch, replay)?;
    let (outer_loss, g_out) = net.loss_and_grad(&phi, &outer)?;
    let direction = mask_update_direction(&g_out, &inner_sum)?;
    lr.update(&direction)?;
    theta.sub_assign(&lr.scale(&g_out)?)?;
    theta.check_finite("theta")?;
    Ok(LookAheadOutcome {
        outer_loss,
        direction,
        inner_rows,
    })
}

/// The binary-mask variant: masked inner steps per example, the inner gradient re-taken at
/// the post-step parameters, then the mask update, then `θ ← θ − α₀ 1[m ≥ 0] ∘ g_out` with
/// the new mask.
pub fn sparse_la_maml_step(
    net: &Mlp,
    theta: &mut ParamVector,
    mask: &mut MaskParams,
    gamma_m: f64,
    batch: &Batch,
    replay: Option<&Batch>,
) -> Result<LookAheadOutcome> {
    check_batch(batch)?;
    check_len(theta.len(), mask.len())?;
    let mut phi = theta.clone();
    let mut inner_sum = GradVector::zeros(theta.len());
    let mut inner_rows = Vec::with_capacity(batch.len());
    for k in 0..batch.len() {
        let sample = batch.select(&[k])?;
        let (_, g) = net.loss_and_grad(&phi, &sample)?;
        phi.sub_assign(&mask.apply_mask(&g)?)?;
        let (_, g_post) = net.loss_and_grad(&phi, &sample)?;
        inner_sum.add_assign(&g_post)?;
        inner_rows.push(k);
    }
    let outer = outer_batch(batch, replay)?;
    let (outer_loss, g_out) = net.loss_and_grad(&phi, &outer)?;
    let direction = mask_update_direction(&g_out, &inner_sum)?;
    mask.update(&direction, gamma_m)?;
    theta.sub_assign(&mask.apply_mask(&g_out)?)?;
    theta.check_finite("theta")?;
    Ok(LookAheadOutcome {
        outer_loss,
        direction,
        inner_rows,
    })
}
