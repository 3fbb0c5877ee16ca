//! Masked inner loop and first-order outer updates of `θ` and the mask.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tasks::TaskData;
use crate::error::{Error, Result};
use crate::mask::{mask_update_direction, GeneratorGrad, MaskParams, StochasticMaskGenerator};
use crate::nn::{Batch, GradVector, Mlp, OptimizerState, ParamVector};

/// How the inner-loop mask is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MaskState {
    /// One per-coordinate `m` shared by every task.
    Plain(MaskParams),
    /// `m` on the generator's target groups is drawn per task; `base` covers the rest.
    Stochastic {
        base: MaskParams,
        generator: StochasticMaskGenerator,
    },
}

impl MaskState {
    /// The mask used when no sampling is wanted: plain `m`, or the generator at `z = 0`.
    pub fn deterministic(&self, net: &Mlp) -> Result<MaskParams> {
        match self {
            MaskState::Plain(m) => Ok(m.clone()),
            MaskState::Stochastic { base, generator } => {
                let m = generator.generate(&vec![0.0; generator.latent_dim()])?;
                generator.materialize(base, net.layout(), &m)
            }
        }
    }

    pub fn base(&self) -> &MaskParams {
        match self {
            MaskState::Plain(m) => m,
            MaskState::Stochastic { base, .. } => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub net: Mlp,
    pub theta: ParamVector,
    pub mask: MaskState,
    pub theta_optimizer: OptimizerState,
    /// Inner-loop length used during meta-training.
    pub inner_steps: usize,
    pub gamma_m: f64,
    /// When set, meta-steps leave `θ` untouched and only learn the mask.
    pub freeze_theta: bool,
    /// Groups whose `m` is pinned to −1 after every mask update.
    pub freeze_groups: Vec<String>,
}

/// Outcome of adapting to one task.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub phi_final: ParamVector,
    /// Sum of the raw (unmasked) inner gradients `Σ_k ∇L_in(φ_k)`, `k = 0..K-1`.
    pub inner_grad_sum: GradVector,
    pub outer_loss: f64,
    pub outer_grad: GradVector,
    /// Validation loss at `θ`, before adaptation.
    pub pre_loss: f64,
    pub pre_accuracy: Option<f64>,
    pub post_accuracy: Option<f64>,
}

/// Result of the inner loop alone.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub phi: ParamVector,
    pub inner_grad_sum: GradVector,
}

/// `K` masked gradient steps from `θ` on `train`: `φ_{k+1} = φ_k − mask(∇L(φ_k))`.
pub fn inner_adapt(net: &Mlp, theta: &ParamVector, mask: &MaskParams, steps: usize, train: &Batch) -> Result<InnerResult> {
    let mut phi = theta.clone();
    let mut sum = GradVector::zeros(theta.len());
    for k in 0..steps {
        let (_, grad) = net.loss_and_grad(&phi, train).map_err(|e| e.within(format!("inner step {k}")))?;
        let step = mask.apply_mask(&grad)?;
        phi.sub_assign(&step)?;
        phi.check_finite(&format!("inner step {k}"))?;
        sum.add_assign(&grad)?;
    }
    Ok(InnerResult {
        phi,
        inner_grad_sum: sum,
    })
}

/// Inner loop on the task's training split, then loss and gradient on its validation split.
pub fn run_episode(net: &Mlp, theta: &ParamVector, mask: &MaskParams, steps: usize, task: &TaskData) -> Result<EpisodeResult> {
    let (pre_loss, pre_accuracy) = net.evaluate(theta, &task.val)?;
    let inner = inner_adapt(net, theta, mask, steps, &task.train)?;
    let (outer_loss, outer_grad) = net.loss_and_grad(&inner.phi, &task.val)?;
    let (_, post_accuracy) = net.evaluate(&inner.phi, &task.val)?;
    Ok(EpisodeResult {
        phi_final: inner.phi,
        inner_grad_sum: inner.inner_grad_sum,
        outer_loss,
        outer_grad,
        pre_loss,
        pre_accuracy,
        post_accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaStepStats {
    pub outer_loss: f64,
    pub outer_accuracy: Option<f64>,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotMetrics {
    pub n_tasks: usize,
    pub pre_loss: MeanStd,
    pub post_loss: MeanStd,
    pub pre_accuracy: Option<MeanStd>,
    pub post_accuracy: Option<MeanStd>,
}

impl FewShotMetrics {
    /// Mean post-adaptation accuracy for classification, negative loss for regression.
    pub fn score(&self) -> f64 {
        match self.post_accuracy {
            Some(a) => a.mean,
            None => -self.post_loss.mean,
        }
    }
}

impl MetaState {
    pub fn new(net: Mlp, theta: ParamVector, mask: MaskState, theta_optimizer: OptimizerState, inner_steps: usize, gamma_m: f64) -> Result<Self> {
        if theta.layout().as_ref() != net.layout().as_ref() {
            return Err(Error::structural("θ layout does not match the network"));
        }
        let base_len = mask.base().len();
        if base_len != theta.len() {
            return Err(Error::structural(format!("mask has {base_len} entries, θ has {}", theta.len())));
        }
        Ok(Self {
            net,
            theta,
            mask,
            theta_optimizer,
            inner_steps,
            gamma_m,
            freeze_theta: false,
            freeze_groups: Vec::new(),
        })
    }

    /// Inner loop with the deterministic mask; never touches `θ` or `m`.
    pub fn inner_adapt(&self, train: &Batch) -> Result<InnerResult> {
        let mask = self.mask.deterministic(&self.net)?;
        inner_adapt(&self.net, &self.theta, &mask, self.inner_steps, train)
    }

    /// One meta-update from a batch of tasks.
    ///
    /// Every task adapts from the same `(θ, m)`. The θ-gradient is the mean over tasks of
    /// `∇L_out(φ_K)`; the mask is ascended along the mean of `∇L_out(φ_K) ∘ Σ_k ∇L_in(φ_k)`.
    /// `rng` is only drawn from when masks are stochastic.
    pub fn meta_step<R: Rng + ?Sized>(&mut self, tasks: &[TaskData], rng: &mut R) -> Result<MetaStepStats> {
        if tasks.is_empty() {
            return Err(Error::Precondition("meta_step needs at least one task".into()));
        }
        let mut outer_grads = Vec::with_capacity(tasks.len());
        let mut directions = Vec::with_capacity(tasks.len());
        let mut latents = Vec::new();
        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        let mut has_acc = false;
        for (i, task) in tasks.iter().enumerate() {
            let sampled;
            let mask = match &self.mask {
                MaskState::Plain(m) => m,
                MaskState::Stochastic { base, generator } => {
                    let (m, z) = generator.sample(rng)?;
                    latents.push(z);
                    sampled = generator.materialize(base, self.net.layout(), &m)?;
                    &sampled
                }
            };
            let ep = run_episode(&self.net, &self.theta, mask, self.inner_steps, task).map_err(|e| e.within(format!("task {i}")))?;
            loss_sum += ep.outer_loss;
            if let Some(a) = ep.post_accuracy {
                acc_sum += a;
                has_acc = true;
            }
            directions.push(mask_update_direction(&ep.outer_grad, &ep.inner_grad_sum)?);
            outer_grads.push(ep.outer_grad);
        }
        let n = tasks.len() as f64;
        let mean_outer = GradVector::mean(&outer_grads)?;
        let mean_direction = GradVector::mean(&directions)?;

        if !self.freeze_theta {
            self.theta_optimizer.step(&mut self.theta, &mean_outer)?;
        }
        match &mut self.mask {
            MaskState::Plain(m) => m.update(&mean_direction, self.gamma_m)?,
            MaskState::Stochastic { base, generator } => {
                let mut acc = GeneratorGrad::zeros_like(generator);
                for (d, z) in directions.iter().zip(&latents) {
                    let restricted = generator.restrict(self.net.layout(), d)?;
                    acc.add_assign(&generator.gradient(&restricted, z)?);
                }
                acc.scale(1.0 / n);
                generator.apply(&acc, base.update_scale(self.gamma_m))?;
                base.update(&mean_direction, self.gamma_m)?;
            }
        }
        if !self.freeze_groups.is_empty() {
            let layout = self.net.layout().clone();
            let groups = self.freeze_groups.clone();
            match &mut self.mask {
                MaskState::Plain(m) => m.clamp_groups(&layout, &groups, -1.0)?,
                MaskState::Stochastic { base, .. } => base.clamp_groups(&layout, &groups, -1.0)?,
            }
        }
        Ok(MetaStepStats {
            outer_loss: loss_sum / n,
            outer_accuracy: has_acc.then(|| acc_sum / n),
        })
    }

    /// Adapts from `θ` with the current mask for `steps` steps on each task and reports
    /// validation metrics before and after. No meta-parameter changes.
    pub fn evaluate(&self, tasks: &[TaskData], steps: usize) -> Result<FewShotMetrics> {
        let mask = self.mask.deterministic(&self.net)?;
        evaluate_with_mask(&self.net, &self.theta, &mask, tasks, steps)
    }

    pub fn sparsity(&self) -> Result<crate::mask::SparsityReport> {
        self.mask.deterministic(&self.net)?.sparsity(self.net.layout())
    }
}

pub fn evaluate_with_mask(net: &Mlp, theta: &ParamVector, mask: &MaskParams, tasks: &[TaskData], steps: usize) -> Result<FewShotMetrics> {
    let mut pre_l = Vec::with_capacity(tasks.len());
    let mut post_l = Vec::with_capacity(tasks.len());
    let mut pre_a = Vec::new();
    let mut post_a = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let (l0, a0) = net.evaluate(theta, &task.val)?;
        let inner = inner_adapt(net, theta, mask, steps, &task.train).map_err(|e| e.within(format!("eval task {i}")))?;
        let (l1, a1) = net.evaluate(&inner.phi, &task.val)?;
        pre_l.push(l0);
        post_l.push(l1);
        if let (Some(a0), Some(a1)) = (a0, a1) {
            pre_a.push(a0);
            post_a.push(a1);
        }
    }
    let classification = !pre_a.is_empty();
    Ok(FewShotMetrics {
        n_tasks: tasks.len(),
        pre_loss: MeanStd::of(&pre_l),
        post_loss: MeanStd::of(&post_l),
        pre_accuracy: classification.then(|| MeanStd::of(&pre_a)),
        post_accuracy: classification.then(|| MeanStd::of(&post_a)),
    })
}
