use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix};
use crate::patterns::{PatternFamily, PatternSet, Transform, N_CLASSES, PIXELS};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// Each task rotates every image by a fixed angle drawn from `[0, π]`.
    Rotations,
    /// Each task applies a fixed pixel permutation.
    Permutations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub kind: StreamKind,
    pub n_tasks: usize,
    pub train_per_task: usize,
    pub test_per_task: usize,
    pub batch_size: usize,
    /// Passes over each incoming batch.
    pub glances: usize,
    /// Passes over each task's training data; 1 is the single-pass protocol.
    pub epochs: usize,
    /// Pixel noise standard deviation.
    pub noise: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            kind: StreamKind::Permutations,
            n_tasks: 5,
            train_per_task: 500,
            test_per_task: 100,
            batch_size: 10,
            glances: 10,
            epochs: 1,
            noise: 0.5,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_tasks", self.n_tasks),
            ("train_per_task", self.train_per_task),
            ("test_per_task", self.test_per_task),
            ("batch_size", self.batch_size),
            ("glances", self.glances),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::field(name, "must be at least 1"));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::field("noise", "must be a non-negative number"));
        }
        Ok(())
    }
}

/// One streamed example. `task_id` is bookkeeping only and never reaches the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub task_id: usize,
    pub input: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamTask {
    pub transform: Transform,
    pub train: Vec<Example>,
    pub test: Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub config: StreamConfig,
    pub tasks: Vec<StreamTask>,
}

impl TaskStream {
    /// Deterministic in `seed`: prototypes, transforms and examples all derive from it.
    pub fn generate(config: StreamConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let patterns = PatternSet::generate(PatternFamily::Strokes, derive_seed(seed, 0));
        let mut transform_rng = seeded(derive_seed(seed, 1));
        let mut next_id = 0;
        let mut tasks = Vec::with_capacity(config.n_tasks);
        for t in 0..config.n_tasks {
            let transform = match config.kind {
                StreamKind::Rotations => Transform::Rotation {
                    angle: transform_rng.random_range(0.0..=PI),
                },
                StreamKind::Permutations => Transform::random_permutation(&mut transform_rng),
            };
            let mut rng = seeded(derive_seed(seed, 100 + t as u64));
            let mut train = Vec::with_capacity(config.train_per_task);
            for _ in 0..config.train_per_task {
                let label = rng.random_range(0..N_CLASSES);
                let input = transform.apply(&patterns.sample(label, config.noise, &mut rng))?;
                train.push(Example {
                    id: next_id,
                    task_id: t,
                    input,
                    label,
                });
                next_id += 1;
            }
            let mut test_inputs = Vec::with_capacity(config.test_per_task * PIXELS);
            let mut test_labels = Vec::with_capacity(config.test_per_task);
            for i in 0..config.test_per_task {
                let label = i % N_CLASSES;
                test_inputs.extend(transform.apply(&patterns.sample(label, config.noise, &mut rng))?);
                test_labels.push(label);
            }
            let test = Batch::classification(Matrix::new(config.test_per_task, PIXELS, test_inputs)?, test_labels, N_CLASSES)?;
            tasks.push(StreamTask { transform, train, test });
        }
        Ok(Self { config, tasks })
    }

    pub fn n_examples(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).sum()
    }
}

pub fn examples_to_batch(examples: &[Example]) -> Result<Batch> {
    let Some(first) = examples.first() else {
        return Err(Error::structural("empty example list"));
    };
    let cols = first.input.len();
    let mut data = Vec::with_capacity(examples.len() * cols);
    for e in examples {
        if e.input.len() != cols {
            return Err(Error::structural("examples of different widths"));
        }
        data.extend_from_slice(&e.input);
    }
    Batch::classification(
        Matrix::new(examples.len(), cols, data)?,
        examples.iter().map(|e| e.label).collect(),
        N_CLASSES,
    )
}
