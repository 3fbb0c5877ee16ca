use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix};
use crate::patterns::{label_permutation, PatternFamily, PatternSet, N_CLASSES, PIXELS};
use crate::rng::{derive_seed, seeded, StdRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineStreamConfig {
    /// Probability of staying on the current task at each step.
    pub p: f64,
    pub horizon: usize,
    pub batch_size: usize,
    pub noise: f64,
    pub families: Vec<PatternFamily>,
}

impl Default for OnlineStreamConfig {
    fn default() -> Self {
        Self {
            p: 0.98,
            horizon: 2000,
            batch_size: 10,
            noise: 0.3,
            families: PatternFamily::ALL.to_vec(),
        }
    }
}

impl OnlineStreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::field("p", "must lie in [0, 1]"));
        }
        if self.horizon == 0 {
            return Err(Error::field("horizon", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::field("batch_size", "must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::field("noise", "must be a non-negative number"));
        }
        if self.families.is_empty() {
            return Err(Error::field("families", "at least one family is required"));
        }
        Ok(())
    }
}

/// A task: one pattern family under one relabelling of its classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineTask {
    pub id: usize,
    /// Index into the configured families.
    pub family: usize,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineStep {
    pub t: usize,
    pub task_id: usize,
    pub family: usize,
    /// Whether the generator switched task at this step (ground truth, never shown to
    /// the learner).
    pub switched: bool,
    pub batch: Batch,
}

/// Lazily generated stream; the task changes with probability `1 − p` before each step
/// after the first.
#[derive(Debug, Clone)]
pub struct OnlineStream {
    config: OnlineStreamConfig,
    sets: Vec<PatternSet>,
    rng: StdRng,
    task: OnlineTask,
    t: usize,
}

impl OnlineStream {
    pub fn new(config: OnlineStreamConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let sets = config
            .families
            .iter()
            .enumerate()
            .map(|(i, &f)| PatternSet::generate(f, derive_seed(seed, i as u64)))
            .collect();
        let mut rng = seeded(derive_seed(seed, 1000));
        let task = Self::new_task(0, config.families.len(), &mut rng);
        Ok(Self {
            config,
            sets,
            rng,
            task,
            t: 0,
        })
    }

    fn new_task(id: usize, n_families: usize, rng: &mut StdRng) -> OnlineTask {
        OnlineTask {
            id,
            family: rng.random_range(0..n_families),
            labels: label_permutation(rng),
        }
    }

    pub fn config(&self) -> &OnlineStreamConfig {
        &self.config
    }

    pub fn family_name(&self, family: usize) -> &'static str {
        self.config.families[family].name()
    }

    pub fn current_task(&self) -> &OnlineTask {
        &self.task
    }

    pub fn next_step(&mut self) -> Result<Option<OnlineStep>> {
        if self.t >= self.config.horizon {
            return Ok(None);
        }
        let mut switched = false;
        if self.t > 0 && self.rng.random::<f64>() >= self.config.p {
            let id = self.task.id + 1;
            self.task = Self::new_task(id, self.config.families.len(), &mut self.rng);
            switched = true;
        }
        let n = self.config.batch_size;
        let set = &self.sets[self.task.family];
        let mut inputs = Vec::with_capacity(n * PIXELS);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let class = self.rng.random_range(0..N_CLASSES);
            inputs.extend(set.sample(class, self.config.noise, &mut self.rng));
            labels.push(self.task.labels[class]);
        }
        let batch = Batch::classification(Matrix::new(n, PIXELS, inputs)?, labels, N_CLASSES)?;
        let step = OnlineStep {
            t: self.t,
            task_id: self.task.id,
            family: self.task.family,
            switched,
            batch,
        };
        self.t += 1;
        Ok(Some(step))
    }
}
