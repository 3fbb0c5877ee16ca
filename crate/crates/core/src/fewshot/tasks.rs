//! Synthetic few-shot task families.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, LossKind, Matrix};

/// A task: adaptation split and evaluation split.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Batch,
    pub val: Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub d_in: usize,
    /// Distance of the class means from the origin.
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum TaskFamily {
    /// `y = A sin(x + φ₀)`, `A ∈ [0.1, 5]`, `φ₀ ∈ [0, π]`, `x ∈ [−5, 5]`.
    Sinusoid { k_shot: usize },
    /// Class means on a sphere of radius `spread`, unit Gaussian noise around each.
    GaussianClusters(ClusterSpec),
    /// Clusters whose inputs are rotated by `rotation` radians in the plane of the first
    /// two coordinates and whose means sit at radius `spread · spread_scale`.
    ShiftedClusters {
        clusters: ClusterSpec,
        rotation: f64,
        spread_scale: f64,
    },
}

impl TaskFamily {
    pub fn loss_kind(&self) -> LossKind {
        match self {
            TaskFamily::Sinusoid { .. } => LossKind::Mse,
            _ => LossKind::CrossEntropy,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            TaskFamily::Sinusoid { .. } => 1,
            TaskFamily::GaussianClusters(c) | TaskFamily::ShiftedClusters { clusters: c, .. } => c.d_in,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            TaskFamily::Sinusoid { .. } => 1,
            TaskFamily::GaussianClusters(c) | TaskFamily::ShiftedClusters { clusters: c, .. } => c.n_way,
        }
    }

    /// The same clusters under a domain shift; sinusoids are returned unchanged.
    pub fn shifted(&self, rotation: f64, spread_scale: f64) -> TaskFamily {
        match *self {
            TaskFamily::GaussianClusters(clusters) | TaskFamily::ShiftedClusters { clusters, .. } => {
                TaskFamily::ShiftedClusters {
                    clusters,
                    rotation,
                    spread_scale,
                }
            }
            s => s,
        }
    }
}

/// Parameters of one sinusoid task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSampler {
    pub family: TaskFamily,
    /// Number of evaluation points per task.
    pub query_size: usize,
}

impl TaskSampler {
    pub fn new(family: TaskFamily, query_size: usize) -> Result<Self> {
        let ok = match family {
            TaskFamily::Sinusoid { k_shot } => k_shot > 0,
            TaskFamily::GaussianClusters(c) => c.n_way >= 2 && c.k_shot > 0 && c.d_in > 0 && c.spread >= 0.0,
            TaskFamily::ShiftedClusters { clusters: c, spread_scale, .. } => {
                c.n_way >= 2 && c.k_shot > 0 && c.d_in >= 2 && c.spread >= 0.0 && spread_scale >= 0.0
            }
        };
        if !ok || query_size == 0 {
            return Err(Error::structural(format!("invalid task family {family:?} / query size {query_size}")));
        }
        Ok(Self { family, query_size })
    }

    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TaskData> {
        match self.family {
            TaskFamily::Sinusoid { k_shot } => {
                let task = Sinusoid {
                    amplitude: rng.random_range(0.1..=5.0),
                    phase: rng.random_range(0.0..=PI),
                };
                let train = sinusoid_batch(&task, k_shot, rng)?;
                let val = sinusoid_batch(&task, self.query_size, rng)?;
                Ok(TaskData { train, val })
            }
            TaskFamily::GaussianClusters(c) => cluster_task(&c, self.query_size, 0.0, 1.0, rng),
            TaskFamily::ShiftedClusters {
                clusters,
                rotation,
                spread_scale,
            } => cluster_task(&clusters, self.query_size, rotation, spread_scale, rng),
        }
    }

    pub fn sample_tasks<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<TaskData>> {
        (0..n).map(|_| self.sample_task(rng)).collect()
    }
}

fn sinusoid_batch<R: Rng + ?Sized>(task: &Sinusoid, n: usize, rng: &mut R) -> Result<Batch> {
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..=5.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| task.eval(x)).collect();
    Batch::regression(Matrix::new(n, 1, xs)?, Matrix::new(n, 1, ys)?)
}

fn cluster_task<R: Rng + ?Sized>(
    c: &ClusterSpec,
    query_size: usize,
    rotation: f64,
    spread_scale: f64,
    rng: &mut R,
) -> Result<TaskData> {
    let radius = c.spread * spread_scale;
    let means: Vec<Vec<f64>> = (0..c.n_way)
        .map(|_| {
            let mut v: Vec<f64> = (0..c.d_in).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in &mut v {
                *x *= radius / norm;
            }
            v
        })
        .collect();
    let (cos, sin) = (rotation.cos(), rotation.sin());
    let mut draw = |label: usize, out: &mut Vec<f64>| {
        let start = out.len();
        for &m in &means[label] {
            let noise: f64 = StandardNormal.sample(rng);
            out.push(m + noise);
        }
        if rotation != 0.0 && c.d_in >= 2 {
            let (x, y) = (out[start], out[start + 1]);
            out[start] = cos * x - sin * y;
            out[start + 1] = sin * x + cos * y;
        }
    };
    let mut support = Vec::with_capacity(c.n_way * c.k_shot * c.d_in);
    let mut support_labels = Vec::with_capacity(c.n_way * c.k_shot);
    for label in 0..c.n_way {
        for _ in 0..c.k_shot {
            draw(label, &mut support);
            support_labels.push(label);
        }
    }
    let mut query = Vec::with_capacity(query_size * c.d_in);
    let mut query_labels = Vec::with_capacity(query_size);
    for q in 0..query_size {
        let label = q % c.n_way;
        draw(label, &mut query);
        query_labels.push(label);
    }
    let train = Batch::classification(Matrix::new(support_labels.len(), c.d_in, support)?, support_labels, c.n_way)?;
    let val = Batch::classification(Matrix::new(query_labels.len(), c.d_in, query)?, query_labels, c.n_way)?;
    Ok(TaskData { train, val })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Targets;
    use crate::rng::seeded;

    fn clusters() -> ClusterSpec {
        ClusterSpec {
            n_way: 5,
            k_shot: 5,
            d_in: 4,
            spread: 3.0,
        }
    }

    #[test]
    fn five_way_five_shot_counts() {
        let s = TaskSampler::new(TaskFamily::GaussianClusters(clusters()), 15).unwrap();
        let t = s.sample_task(&mut seeded(0)).unwrap();
        assert_eq!(t.train.len(), 25);
        assert_eq!(t.val.len(), 15);
        if let Targets::Classes { labels, .. } = &t.train.targets {
            for c in 0..5 {
                assert_eq!(labels.iter().filter(|&&l| l == c).count(), 5);
            }
        } else {
            panic!("classification expected");
        }
    }

    #[test]
    fn sinusoid_at_zero() {
        let task = Sinusoid { amplitude: 2.5, phase: 0.7 };
        assert_eq!(task.eval(0.0), 2.5 * 0.7f64.sin());
    }

    #[test]
    fn sinusoid_ranges() {
        let s = TaskSampler::new(TaskFamily::Sinusoid { k_shot: 10 }, 10).unwrap();
        let mut rng = seeded(4);
        for _ in 0..50 {
            let t = s.sample_task(&mut rng).unwrap();
            assert!(t.train.inputs.data().iter().all(|x| (-5.0..=5.0).contains(x)));
            if let Targets::Regression(y) = &t.val.targets {
                assert!(y.data().iter().all(|v| v.abs() <= 5.0));
            }
        }
    }

    #[test]
    fn seeded_tasks_repeat() {
        let s = TaskSampler::new(TaskFamily::GaussianClusters(clusters()), 10).unwrap();
        assert_eq!(s.sample_task(&mut seeded(8)).unwrap(), s.sample_task(&mut seeded(8)).unwrap());
    }

    #[test]
    fn zero_shift_matches_source() {
        let base = TaskSampler::new(TaskFamily::GaussianClusters(clusters()), 10).unwrap();
        let shifted = TaskSampler::new(base.family.shifted(0.0, 1.0), 10).unwrap();
        assert_eq!(base.sample_task(&mut seeded(2)).unwrap(), shifted.sample_task(&mut seeded(2)).unwrap());
    }

    #[test]
    fn rotation_preserves_norms() {
        let base = TaskSampler::new(TaskFamily::GaussianClusters(clusters()), 10).unwrap();
        let rot = TaskSampler::new(base.family.shifted(1.0, 1.0), 10).unwrap();
        let a = base.sample_task(&mut seeded(2)).unwrap();
        let b = rot.sample_task(&mut seeded(2)).unwrap();
        for i in 0..a.train.len() {
            let na: f64 = a.train.inputs.row(i).iter().map(|x| x * x).sum();
            let nb: f64 = b.train.inputs.row(i).iter().map(|x| x * x).sum();
            assert!((na - nb).abs() < 1e-12);
        }
    }
}
