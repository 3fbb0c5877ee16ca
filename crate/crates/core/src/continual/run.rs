use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lamaml::{la_maml_step, sparse_la_maml_step, LearningRateVector};
use super::reservoir::ReservoirBuffer;
use super::stream::{examples_to_batch, Example, TaskStream};
use crate::error::{Error, Result};
use crate::mask::{MaskKind, MaskParams, SparsityReport};
use crate::metrics::MetricsTable;
use crate::nn::{Mlp, ParamVector};
use crate::rng::{derive_seed, seeded};

/// `a[i][j]`: accuracy on task `j` right after finishing task `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    n_tasks: usize,
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            n_tasks,
            rows: Vec::with_capacity(n_tasks),
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.n_tasks
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.n_tasks || self.rows.len() == self.n_tasks {
            return Err(Error::structural(format!(
                "accuracy row of length {} does not fit a {}-task matrix with {} rows",
                row.len(),
                self.n_tasks,
                self.rows.len()
            )));
        }
        if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::structural("accuracy outside [0, 1]"));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Mean accuracy over the tasks seen so far, measured at the latest row.
    pub fn partial_ra(&self) -> Option<f64> {
        let last = self.rows.last()?;
        let seen = self.rows.len();
        Some(last[..seen].iter().sum::<f64>() / seen as f64)
    }

    /// One row per measurement point, one column per task.
    pub fn to_table(&self) -> MetricsTable {
        let cols = (0..self.n_tasks).map(|j| format!("task_{j}")).collect();
        let mut t = MetricsTable::new(cols);
        for (i, r) in self.rows.iter().enumerate() {
            t.push(i as u64, r.clone()).expect("row width checked on insert");
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinualMetrics {
    /// Retained accuracy: mean of the final row.
    pub ra: f64,
    /// Backward transfer and interference: mean of final minus just-learned accuracy.
    pub bti: f64,
}

pub fn continual_metrics(matrix: &AccuracyMatrix) -> Result<ContinualMetrics> {
    if !matrix.is_complete() || matrix.n_tasks == 0 {
        return Err(Error::structural(format!(
            "accuracy matrix has {} of {} rows",
            matrix.rows.len(),
            matrix.n_tasks
        )));
    }
    let t = matrix.n_tasks;
    let last = &matrix.rows[t - 1];
    let ra = last.iter().sum::<f64>() / t as f64;
    let bti = (0..t).map(|j| last[j] - matrix.rows[j][j]).sum::<f64>() / t as f64;
    Ok(ContinualMetrics { ra, bti })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContinualMethod {
    /// Plain sequential SGD on each incoming batch.
    SgdBaseline,
    /// SGD on the incoming batch plus a replay sample.
    ReplaySgd,
    /// Look-ahead steps with meta-learned rectified learning rates.
    LaMaml,
    /// Look-ahead steps with a meta-learned binary mask.
    SparseLaMaml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub method: ContinualMethod,
    pub alpha0: f64,
    /// Meta step for the learning rates or the mask.
    pub gamma: f64,
    pub straight_through: bool,
    pub buffer_capacity: usize,
    /// Replay examples per step; defaults to the incoming batch size.
    pub replay_size: Option<usize>,
    /// Initial fraction of frozen coordinates for the sparse learner's mask.
    pub init_sparsity: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            method: ContinualMethod::SparseLaMaml,
            alpha0: 0.2,
            gamma: 0.1,
            straight_through: true,
            buffer_capacity: 500,
            replay_size: None,
            init_sparsity: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    /// Accuracy on every task before any training.
    pub initial: Vec<f64>,
    pub matrix: AccuracyMatrix,
    /// One row per finished task.
    pub telemetry: MetricsTable,
    pub theta: ParamVector,
    pub mask: Option<MaskParams>,
    pub learning_rates: Option<LearningRateVector>,
    /// Inner-loop occurrences of each example, indexed by example id.
    pub inner_counts: Vec<u32>,
}

enum Learner {
    Sgd { replay: bool },
    Rates(LearningRateVector),
    Mask(MaskParams),
}

/// Streams every task once (or `epochs` times), evaluating all tasks after each one.
/// `mask` seeds the binary mask of the sparse method and defaults to all-on.
pub fn run_stream(
    net: &Mlp,
    theta: ParamVector,
    mask: Option<MaskParams>,
    stream: &TaskStream,
    learner: &LearnerConfig,
    seed: u64,
) -> Result<StreamOutcome> {
    if !(learner.alpha0 > 0.0) {
        return Err(Error::field("alpha0", "must be positive"));
    }
    let mut theta = theta;
    let mut state = match learner.method {
        ContinualMethod::SgdBaseline => Learner::Sgd { replay: false },
        ContinualMethod::ReplaySgd => Learner::Sgd { replay: true },
        ContinualMethod::LaMaml => Learner::Rates(LearningRateVector::uniform(
            theta.len(),
            learner.alpha0,
            learner.straight_through,
            learner.gamma,
        )?),
        ContinualMethod::SparseLaMaml => Learner::Mask(match mask {
            Some(m) => m,
            None => MaskParams::all_on(theta.len(), MaskKind::Binary, learner.alpha0)?,
        }),
    };
    let cfg = stream.config;
    let replay_size = learner.replay_size.unwrap_or(cfg.batch_size);
    let mut buffer: ReservoirBuffer<Example> = ReservoirBuffer::new(learner.buffer_capacity, derive_seed(seed, 0));
    let mut order_rng = seeded(derive_seed(seed, 1));
    let mut inner_counts = vec![0u32; stream.n_examples()];
    let n_tasks = stream.tasks.len();
    let evaluate_all = |theta: &ParamVector| -> Result<Vec<f64>> {
        stream
            .tasks
            .iter()
            .map(|t| net.evaluate(theta, &t.test).map(|(_, acc)| acc.unwrap_or(0.0)))
            .collect()
    };
    let initial = evaluate_all(&theta)?;
    let mut matrix = AccuracyMatrix::new(n_tasks);
    let mut telemetry = MetricsTable::new(telemetry_columns(net));

    for (t, task) in stream.tasks.iter().enumerate() {
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..task.train.len()).collect();
            if epoch > 0 {
                order.shuffle(&mut order_rng);
            }
            for chunk in order.chunks(cfg.batch_size) {
                let examples: Vec<Example> = chunk.iter().map(|&i| task.train[i].clone()).collect();
                let batch = examples_to_batch(&examples)?;
                for _ in 0..cfg.glances {
                    let replay = match &state {
                        Learner::Sgd { replay: false } => None,
                        _ => {
                            let r = buffer.sample(replay_size);
                            if r.is_empty() {
                                None
                            } else {
                                Some(examples_to_batch(&r)?)
                            }
                        }
                    };
                    let (loss, rows) = match &mut state {
                        Learner::Sgd { .. } => {
                            let full = match &replay {
                                Some(r) => batch.concat(r)?,
                                None => batch.clone(),
                            };
                            let (loss, mut g) = net.loss_and_grad(&theta, &full)?;
                            g.scale(learner.alpha0);
                            theta.sub_assign(&g)?;
                            theta.check_finite("theta")?;
                            (loss, (0..batch.len()).collect())
                        }
                        Learner::Rates(lr) => {
                            let o = la_maml_step(net, &mut theta, lr, &batch, replay.as_ref())?;
                            (o.outer_loss, o.inner_rows)
                        }
                        Learner::Mask(m) => {
                            let o = sparse_la_maml_step(net, &mut theta, m, learner.gamma, &batch, replay.as_ref())?;
                            (o.outer_loss, o.inner_rows)
                        }
                    };
                    for r in rows {
                        inner_counts[examples[r].id] += 1;
                    }
                    loss_sum += loss;
                    loss_count += 1;
                }
                buffer.offer_all(&examples);
            }
        }
        matrix.push_row(evaluate_all(&theta)?)?;
        let report = sparsity_of(net, &state)?;
        let mut row = vec![loss_sum / loss_count as f64, matrix.partial_ra().unwrap_or(0.0), report.overall];
        row.extend(report.per_group.iter().map(|(_, v)| *v));
        telemetry.push(t as u64, row)?;
    }

    let (mask, learning_rates) = match state {
        Learner::Sgd { .. } => (None, None),
        Learner::Rates(lr) => (None, Some(lr)),
        Learner::Mask(m) => (Some(m), None),
    };
    Ok(StreamOutcome {
        initial,
        matrix,
        telemetry,
        theta,
        mask,
        learning_rates,
        inner_counts,
    })
}

fn telemetry_columns(net: &Mlp) -> Vec<String> {
    let mut cols = vec!["mean_loss".to_owned(), "ra_seen".to_owned(), "sparsity_overall".to_owned()];
    cols.extend(net.layout().groups().iter().map(|g| format!("sparsity_{}", g.name)));
    cols
}

fn sparsity_of(net: &Mlp, state: &Learner) -> Result<SparsityReport> {
    let layout = net.layout();
    match state {
        Learner::Sgd { .. } => MaskParams::all_on(layout.total_len(), MaskKind::Binary, 1.0)?.sparsity(layout),
        Learner::Rates(lr) => lr.as_mask()?.sparsity(layout),
        Learner::Mask(m) => m.sparsity(layout),
    }
}
