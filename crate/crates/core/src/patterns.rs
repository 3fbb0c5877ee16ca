//! Small synthetic image classes (8×8, 10 classes) for the streaming regimes.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub const SIDE: usize = 8;
pub const PIXELS: usize = SIDE * SIDE;
pub const N_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternFamily {
    /// Digit-like line drawings.
    Strokes,
    /// Pairs of soft blobs.
    Blobs,
    /// Oriented gratings.
    Gratings,
}

impl PatternFamily {
    pub const ALL: [PatternFamily; 3] = [PatternFamily::Strokes, PatternFamily::Blobs, PatternFamily::Gratings];

    pub fn name(self) -> &'static str {
        match self {
            PatternFamily::Strokes => "strokes",
            PatternFamily::Blobs => "blobs",
            PatternFamily::Gratings => "gratings",
        }
    }
}

/// Ten class prototypes of one family.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub family: PatternFamily,
    prototypes: Vec<Vec<f64>>,
}

impl PatternSet {
    pub fn generate(family: PatternFamily, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let prototypes = (0..N_CLASSES)
            .map(|_| match family {
                PatternFamily::Strokes => strokes(&mut rng),
                PatternFamily::Blobs => blobs(&mut rng),
                PatternFamily::Gratings => grating(&mut rng),
            })
            .collect();
        Self { family, prototypes }
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    /// Prototype plus i.i.d. Gaussian pixel noise.
    pub fn sample<R: Rng + ?Sized>(&self, class: usize, noise: f64, rng: &mut R) -> Vec<f64> {
        self.prototypes[class]
            .iter()
            .map(|&p| {
                let n: f64 = StandardNormal.sample(rng);
                p + noise * n
            })
            .collect()
    }
}

fn strokes<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let mut img = vec![0.0; PIXELS];
    let n = rng.random_range(2..=3);
    for _ in 0..n {
        let (r0, c0) = (rng.random_range(0..SIDE) as f64, rng.random_range(0..SIDE) as f64);
        let (r1, c1) = (rng.random_range(0..SIDE) as f64, rng.random_range(0..SIDE) as f64);
        let steps = 16;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let r = (r0 + t * (r1 - r0)).round() as usize;
            let c = (c0 + t * (c1 - c0)).round() as usize;
            img[r * SIDE + c] = 1.0;
        }
    }
    img
}

fn blobs<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let mut img = vec![0.0f64; PIXELS];
    for _ in 0..2 {
        let (cr, cc) = (rng.random_range(0.0..SIDE as f64), rng.random_range(0.0..SIDE as f64));
        let s: f64 = rng.random_range(0.8..1.6);
        for r in 0..SIDE {
            for c in 0..SIDE {
                let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                let v = (-d2 / (2.0 * s * s)).exp();
                img[r * SIDE + c] = img[r * SIDE + c].max(v);
            }
        }
    }
    img
}

fn grating<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let angle: f64 = rng.random_range(0.0..PI);
    let freq: f64 = rng.random_range(0.6..1.8);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let (ca, sa) = (angle.cos(), angle.sin());
    (0..PIXELS)
        .map(|i| {
            let (r, c) = ((i / SIDE) as f64, (i % SIDE) as f64);
            0.5 + 0.5 * (freq * (c * ca + r * sa) + phase).sin()
        })
        .collect()
}

/// Per-task input transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "transform")]
pub enum Transform {
    Identity,
    /// Rotation about the image centre, nearest-neighbour resampling, zero fill.
    Rotation { angle: f64 },
    /// `out[i] = in[perm[i]]`.
    Permutation { perm: Vec<usize> },
}

impl Transform {
    pub fn random_permutation<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..PIXELS).collect();
        perm.shuffle(rng);
        Transform::Permutation { perm }
    }

    pub fn apply(&self, img: &[f64]) -> Result<Vec<f64>> {
        if img.len() != PIXELS {
            return Err(Error::structural(format!("expected {PIXELS} pixels, got {}", img.len())));
        }
        Ok(match self {
            Transform::Identity => img.to_vec(),
            Transform::Permutation { perm } => {
                if perm.len() != PIXELS {
                    return Err(Error::structural("permutation has the wrong length"));
                }
                perm.iter().map(|&p| img[p]).collect()
            }
            Transform::Rotation { angle } => {
                let (ca, sa) = (angle.cos(), angle.sin());
                let centre = (SIDE as f64 - 1.0) / 2.0;
                (0..PIXELS)
                    .map(|i| {
                        let y = (i / SIDE) as f64 - centre;
                        let x = (i % SIDE) as f64 - centre;
                        let sx = (ca * x + sa * y + centre).round();
                        let sy = (-sa * x + ca * y + centre).round();
                        if (0.0..SIDE as f64).contains(&sx) && (0.0..SIDE as f64).contains(&sy) {
                            img[sy as usize * SIDE + sx as usize]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        })
    }
}

/// Random relabelling of the ten classes.
pub fn label_permutation<R: Rng + ?Sized>(rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..N_CLASSES).collect();
    p.shuffle(rng);
    p
}
