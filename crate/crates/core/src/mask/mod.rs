//! Gradient modulation by a meta-learned per-coordinate parameter `m`.
//!
//! Three parameterizations of the inner-loop step are supported:
//!
//! - `binary`: `α · 1[m ≥ 0] ∘ g` (a binary gradient mask, with `m = 0` counted as on)
//! - `relu`: `(m)₊ ∘ g` (rectified per-coordinate learning rates)
//! - `exp`: `exp(m) ∘ g` (exponential per-coordinate learning rates)
//!
//! `m` is meta-learned with a first-order update driven by the alignment between the
//! outer-loss gradient and the summed inner-loop gradients. The step function and the
//! positive part are differentiated straight-through (their derivative is taken to be
//! one), so a coordinate switched off can always switch back on.

mod sparsity;
mod stochastic;

use serde::{Deserialize, Serialize};

pub use sparsity::{sparsity_report, SparsityReport, EXP_FREEZE_THRESHOLD};
pub use stochastic::{GeneratorGrad, StochasticMaskGenerator, DEFAULT_LATENT_DIM};

use crate::error::{Error, Result};
use crate::nn::{check_len, GradVector, LayerLayout};

/// Largest `m` whose exponential is comfortably representable.
pub const EXP_MAX: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Binary,
    Relu,
    Exp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    m: Vec<f64>,
    kind: MaskKind,
    alpha0: f64,
}

impl MaskParams {
    pub fn new(m: Vec<f64>, kind: MaskKind, alpha0: f64) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::structural(format!("alpha0 must be positive, got {alpha0}")));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("mask", "non-finite mask parameter"));
        }
        Ok(Self { m, kind, alpha0 })
    }

    /// Mask that leaves every coordinate on: `m = 0` for binary, `m = α` for relu,
    /// `m = ln α` for exp, so the inner step is plain `α · g` (up to rounding for exp).
    pub fn all_on(len: usize, kind: MaskKind, alpha0: f64) -> Result<Self> {
        let v = match kind {
            MaskKind::Binary => 0.0,
            MaskKind::Relu => alpha0,
            MaskKind::Exp => alpha0.ln(),
        };
        Self::new(vec![v; len], kind, alpha0)
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn m_mut(&mut self) -> &mut [f64] {
        &mut self.m
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Whether coordinate `i` currently receives no inner-loop update.
    pub fn is_frozen(&self, i: usize) -> bool {
        let v = self.m[i];
        match self.kind {
            MaskKind::Binary => v < 0.0,
            MaskKind::Relu => v <= 0.0,
            MaskKind::Exp => v.exp() < EXP_FREEZE_THRESHOLD,
        }
    }

    /// Effective inner-loop learning rate of every coordinate.
    pub fn effective_rates(&self) -> Result<Vec<f64>> {
        self.m
            .iter()
            .map(|&v| match self.kind {
                MaskKind::Binary => Ok(if v >= 0.0 { self.alpha0 } else { 0.0 }),
                MaskKind::Relu => Ok(v.max(0.0)),
                MaskKind::Exp => exp_checked(v),
            })
            .collect()
    }

    /// The inner-loop step `Δ` such that `φ ← φ − Δ`.
    pub fn apply_mask(&self, grad: &GradVector) -> Result<GradVector> {
        check_len(self.len(), grad.len())?;
        let out = match self.kind {
            MaskKind::Binary => self
                .m
                .iter()
                .zip(grad.values())
                .map(|(&m, &g)| if m >= 0.0 { self.alpha0 * g } else { 0.0 })
                .collect(),
            MaskKind::Relu => self
                .m
                .iter()
                .zip(grad.values())
                .map(|(&m, &g)| if m > 0.0 { m * g } else { 0.0 })
                .collect(),
            MaskKind::Exp => self
                .m
                .iter()
                .zip(grad.values())
                .map(|(&m, &g)| exp_checked(m).map(|e| e * g))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(GradVector::new(out))
    }

    /// Ascends `m` along `direction` (see [`mask_update_direction`]).
    ///
    /// binary: `m += α γ d`; relu: `m += γ d`; exp: `m += γ exp(m) d`.
    pub fn update(&mut self, direction: &GradVector, gamma_m: f64) -> Result<()> {
        check_len(self.len(), direction.len())?;
        if !(gamma_m >= 0.0 && gamma_m.is_finite()) {
            return Err(Error::structural(format!("mask learning rate must be non-negative, got {gamma_m}")));
        }
        if !direction.is_finite() {
            return Err(Error::numerical("mask update", "non-finite direction"));
        }
        let scale = self.update_scale(gamma_m);
        for (m, d) in self.m.iter_mut().zip(direction.values()) {
            match self.kind {
                MaskKind::Binary | MaskKind::Relu => *m += scale * d,
                MaskKind::Exp => *m += scale * m.exp() * d,
            }
        }
        if self.m.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("mask update", "non-finite mask parameter"));
        }
        Ok(())
    }

    /// Multiplier applied to the direction before it is added to `m`: `α γ` for the
    /// binary kind (the step size lives outside `m`), `γ` otherwise.
    pub fn update_scale(&self, gamma_m: f64) -> f64 {
        match self.kind {
            MaskKind::Binary => self.alpha0 * gamma_m,
            MaskKind::Relu | MaskKind::Exp => gamma_m,
        }
    }

    /// Sets `m` to `value` on every coordinate of the named groups.
    pub fn clamp_groups(&mut self, layout: &LayerLayout, groups: &[String], value: f64) -> Result<()> {
        check_len(self.len(), layout.total_len())?;
        for name in groups {
            let g = layout
                .group(name)
                .ok_or_else(|| Error::structural(format!("unknown parameter group `{name}`")))?;
            self.m[g.range()].fill(value);
        }
        Ok(())
    }

    pub fn sparsity(&self, layout: &LayerLayout) -> Result<SparsityReport> {
        sparsity_report(self, layout)
    }
}

fn exp_checked(m: f64) -> Result<f64> {
    if m > EXP_MAX {
        return Err(Error::numerical("exp mask", format!("exp({m}) overflows")));
    }
    Ok(m.exp())
}

/// `g_out ∘ Σ_k g_in_k`: positive entries push `m` up (keep learning), negative down.
pub fn mask_update_direction(outer_grad: &GradVector, inner_grad_sum: &GradVector) -> Result<GradVector> {
    outer_grad.hadamard(inner_grad_sum)
}
