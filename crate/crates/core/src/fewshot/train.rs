//! Meta-training loop with validation-based early stopping and per-iteration telemetry.

use serde::{Deserialize, Serialize};

use super::meta::{FewShotMetrics, MaskState, MetaState};
use super::tasks::{TaskData, TaskSampler};
use crate::error::{Error, Result};
use crate::metrics::MetricsTable;
use crate::nn::{OptimizerState, ParamVector};
use crate::rng::{seeded, StdRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub tasks_per_batch: usize,
    /// Validate every this many iterations (0 disables validation).
    pub val_every: u64,
    pub val_tasks: usize,
    /// Inner-loop length at validation and test time.
    pub k_test: usize,
    /// Validations without improvement before stopping; 0 disables early stopping and
    /// the final state is returned.
    pub patience: usize,
}

/// Everything needed to resume meta-training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerSnapshot {
    pub theta: Vec<f64>,
    pub mask: MaskState,
    pub optimizer: OptimizerState,
    pub task_rng: StdRng,
    pub mask_rng: StdRng,
    pub iteration: u64,
    pub best: Option<BestSnapshot>,
    pub evals_since_best: usize,
    pub last_val: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub iteration: u64,
    pub score: f64,
    pub theta: Vec<f64>,
    pub mask: MaskState,
}

pub struct MetaTrainer {
    pub state: MetaState,
    pub sampler: TaskSampler,
    pub config: TrainConfig,
    task_rng: StdRng,
    mask_rng: StdRng,
    val_tasks: Vec<TaskData>,
    iteration: u64,
    best: Option<BestSnapshot>,
    evals_since_best: usize,
    last_val: f64,
    stopped: bool,
    telemetry: MetricsTable,
}

impl MetaTrainer {
    /// `task_seed` drives training-task sampling, `val_seed` the fixed validation set and
    /// `mask_seed` stochastic mask draws.
    pub fn new(state: MetaState, sampler: TaskSampler, config: TrainConfig, task_seed: u64, val_seed: u64, mask_seed: u64) -> Result<Self> {
        if config.tasks_per_batch == 0 {
            return Err(Error::field("tasks_per_batch", "must be at least 1"));
        }
        let val_tasks = sampler.sample_tasks(config.val_tasks, &mut seeded(val_seed))?;
        let telemetry = MetricsTable::new(telemetry_columns(&state, &sampler));
        let mut trainer = Self {
            state,
            sampler,
            config,
            task_rng: seeded(task_seed),
            mask_rng: seeded(mask_seed),
            val_tasks,
            iteration: 0,
            best: None,
            evals_since_best: 0,
            last_val: 0.0,
            stopped: false,
            telemetry,
        };
        if trainer.validation_enabled() {
            trainer.validate()?;
        }
        Ok(trainer)
    }

    fn validation_enabled(&self) -> bool {
        self.config.val_every > 0 && !self.val_tasks.is_empty()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.stopped || self.iteration >= self.config.iterations
    }

    pub fn telemetry(&self) -> &MetricsTable {
        &self.telemetry
    }

    pub fn take_telemetry(&mut self) -> MetricsTable {
        let cols = self.telemetry.columns().to_vec();
        std::mem::replace(&mut self.telemetry, MetricsTable::new(cols))
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.score)
    }

    pub fn val_tasks(&self) -> &[TaskData] {
        &self.val_tasks
    }

    fn validate(&mut self) -> Result<()> {
        let metrics = self.state.evaluate(&self.val_tasks, self.config.k_test)?;
        let score = metrics.score();
        self.last_val = score;
        let improved = self.best.as_ref().is_none_or(|b| score > b.score);
        if improved {
            self.best = Some(BestSnapshot {
                iteration: self.iteration,
                score,
                theta: self.state.theta.values().to_vec(),
                mask: self.state.mask.clone(),
            });
            self.evals_since_best = 0;
        } else {
            self.evals_since_best += 1;
            if self.config.patience > 0 && self.evals_since_best >= self.config.patience {
                self.stopped = true;
            }
        }
        Ok(())
    }

    /// One meta-iteration; appends a telemetry row.
    pub fn step(&mut self) -> Result<()> {
        let tasks = self.sampler.sample_tasks(self.config.tasks_per_batch, &mut self.task_rng)?;
        let stats = self
            .state
            .meta_step(&tasks, &mut self.mask_rng)
            .map_err(|e| e.within(format!("iteration {}", self.iteration)))?;
        self.iteration += 1;
        if self.validation_enabled() && self.iteration % self.config.val_every == 0 {
            self.validate()?;
        }
        let sparsity = self.state.sparsity()?;
        let mut row = vec![stats.outer_loss];
        if let Some(a) = stats.outer_accuracy {
            row.push(a);
        }
        row.push(self.last_val);
        row.push(sparsity.overall);
        row.extend(sparsity.per_group.iter().map(|(_, v)| *v));
        self.telemetry.push(self.iteration, row)
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// Best validated state when early stopping is on, otherwise the current state.
    pub fn result_state(&self) -> Result<MetaState> {
        let mut out = self.state.clone();
        if self.config.patience > 0 {
            if let Some(best) = &self.best {
                out.theta = ParamVector::new(best.theta.clone(), out.net.layout().clone())?;
                out.mask = best.mask.clone();
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, tasks: &[TaskData]) -> Result<FewShotMetrics> {
        self.state.evaluate(tasks, self.config.k_test)
    }

    pub fn snapshot(&self) -> TrainerSnapshot {
        TrainerSnapshot {
            theta: self.state.theta.values().to_vec(),
            mask: self.state.mask.clone(),
            optimizer: self.state.theta_optimizer.clone(),
            task_rng: self.task_rng.clone(),
            mask_rng: self.mask_rng.clone(),
            iteration: self.iteration,
            best: self.best.clone(),
            evals_since_best: self.evals_since_best,
            last_val: self.last_val,
            stopped: self.stopped,
        }
    }

    /// Rebuilds a trainer from a snapshot; `state` supplies the network and fixed settings.
    pub fn restore(mut state: MetaState, sampler: TaskSampler, config: TrainConfig, val_seed: u64, snap: TrainerSnapshot) -> Result<Self> {
        state.theta = ParamVector::new(snap.theta, state.net.layout().clone())?;
        if snap.mask.base().len() != state.theta.len() {
            return Err(Error::structural("snapshot mask does not match the network"));
        }
        state.mask = snap.mask;
        state.theta_optimizer = snap.optimizer;
        let val_tasks = sampler.sample_tasks(config.val_tasks, &mut seeded(val_seed))?;
        let telemetry = MetricsTable::new(telemetry_columns(&state, &sampler));
        Ok(Self {
            state,
            sampler,
            config,
            task_rng: snap.task_rng,
            mask_rng: snap.mask_rng,
            val_tasks,
            iteration: snap.iteration,
            best: snap.best,
            evals_since_best: snap.evals_since_best,
            last_val: snap.last_val,
            stopped: snap.stopped,
            telemetry,
        })
    }
}

pub fn telemetry_columns(state: &MetaState, sampler: &TaskSampler) -> Vec<String> {
    let mut cols = vec!["meta_loss".to_owned()];
    if sampler.family.loss_kind() == crate::nn::LossKind::CrossEntropy {
        cols.push("meta_accuracy".to_owned());
    }
    cols.push("val_score".to_owned());
    cols.push("sparsity_overall".to_owned());
    for g in state.net.layout().groups() {
        cols.push(format!("sparsity_{}", g.name));
    }
    cols
}

/// Runs meta-training to completion; returns the selected state and the telemetry.
pub fn meta_train(trainer: &mut MetaTrainer) -> Result<(MetaState, MetricsTable)> {
    trainer.run()?;
    Ok((trainer.result_state()?, trainer.telemetry().clone()))
}

/// Evaluation on tasks from a shifted sampler with the mask held fixed.
pub fn cross_domain_eval(state: &MetaState, shifted: &TaskSampler, n_tasks: usize, k_test: usize, seed: u64) -> Result<FewShotMetrics> {
    let tasks = shifted.sample_tasks(n_tasks, &mut seeded(seed))?;
    state.evaluate(&tasks, k_test)
}

/// Mask-only meta-learning on top of a fixed, already meta-learned initialization.
pub fn two_phase_trainer(mut state: MetaState, sampler: TaskSampler, config: TrainConfig, task_seed: u64, val_seed: u64, mask_seed: u64) -> Result<MetaTrainer> {
    state.freeze_theta = true;
    MetaTrainer::new(state, sampler, config, task_seed, val_seed, mask_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fewshot::tasks::{ClusterSpec, TaskFamily};
    use crate::mask::{MaskKind, MaskParams};
    use crate::nn::{init_mask_values, init_params, Activation, InitScheme, LossKind, Mlp};

    fn setup(patience: usize, iterations: u64) -> MetaTrainer {
        let family = TaskFamily::GaussianClusters(ClusterSpec {
            n_way: 3,
            k_shot: 2,
            d_in: 4,
            spread: 2.0,
        });
        let sampler = TaskSampler::new(family, 6).unwrap();
        let net = Mlp::new(vec![4, 8, 3], Activation::Relu, LossKind::CrossEntropy, true).unwrap();
        let theta = init_params(net.layout(), InitScheme::Kaiming, 1).unwrap();
        let m = init_mask_values(net.layout(), 0.5, 2).unwrap();
        let mask = MaskState::Plain(MaskParams::new(m, MaskKind::Binary, 0.1).unwrap());
        let opt = OptimizerState::adam(0.001, theta.len());
        let state = MetaState::new(net, theta, mask, opt, 3, 0.5).unwrap();
        let config = TrainConfig {
            iterations,
            tasks_per_batch: 2,
            val_every: 2,
            val_tasks: 4,
            k_test: 3,
            patience,
        };
        MetaTrainer::new(state, sampler, config, 10, 11, 12).unwrap()
    }

    #[test]
    fn telemetry_row_per_iteration() {
        let mut t = setup(0, 7);
        t.run().unwrap();
        assert_eq!(t.telemetry().len(), 7);
        assert_eq!(t.telemetry().columns().len(), 4 + 4);
    }

    #[test]
    fn patience_zero_returns_final_state() {
        let mut t = setup(0, 6);
        let (state, _) = meta_train(&mut t).unwrap();
        assert_eq!(state.theta, t.state.theta);
    }

    #[test]
    fn early_stopping_returns_best() {
        let mut t = setup(1, 40);
        let (state, _) = meta_train(&mut t).unwrap();
        let best = t.best.clone().unwrap();
        assert_eq!(state.theta.values(), &best.theta[..]);
        let score = state.evaluate(t.val_tasks(), 3).unwrap().score();
        assert_eq!(score, best.score);
    }

    #[test]
    fn snapshot_resume_is_exact() {
        let mut straight = setup(0, 10);
        straight.run().unwrap();

        let mut first = setup(0, 10);
        for _ in 0..5 {
            first.step().unwrap();
        }
        let snap = first.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let snap: TrainerSnapshot = serde_json::from_str(&json).unwrap();
        let fresh = setup(0, 10);
        let mut resumed = MetaTrainer::restore(fresh.state.clone(), fresh.sampler, fresh.config, 11, snap).unwrap();
        resumed.run().unwrap();
        assert_eq!(resumed.state.theta, straight.state.theta);
        assert_eq!(resumed.state.mask, straight.state.mask);
        assert_eq!(resumed.telemetry().records(), &straight.telemetry().records()[5..]);
    }
}
