use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layout::{GroupKind, LayerLayout, ParamVector};
use crate::error::{Error, Result};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum InitScheme {
    /// Gaussian weights with std `sqrt(2 / fan_in)`, zero biases.
    Kaiming,
    Uniform { lo: f64, hi: f64 },
    Constant { value: f64 },
}

pub fn init_params(layout: &Arc<LayerLayout>, scheme: InitScheme, seed: u64) -> Result<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.total_len()];
    match scheme {
        InitScheme::Constant { value } => values.fill(value),
        InitScheme::Uniform { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::structural(format!("uniform init needs lo < hi, got [{lo}, {hi}]")));
            }
            for v in &mut values {
                *v = rng.random_range(lo..=hi);
            }
        }
        InitScheme::Kaiming => {
            for g in layout.groups() {
                if g.kind == GroupKind::Bias {
                    continue;
                }
                let std = (2.0 / g.cols as f64).sqrt();
                let normal = Normal::new(0.0, std).map_err(|e| Error::structural(e.to_string()))?;
                for v in &mut values[g.range()] {
                    *v = normal.sample(&mut rng);
                }
            }
        }
    }
    ParamVector::new(values, layout.clone())
}

/// Kaiming-scaled mask values with a prescribed probability of being negative.
///
/// Each coordinate gets magnitude `|N(0, 2/fan_in)|` and a negative sign with probability
/// `sparsity`. Bias groups use the fan-in of the weight group they follow. With
/// `sparsity = 0.5` this is distributed exactly like a Kaiming draw, including for biases.
pub fn init_mask_values(layout: &LayerLayout, sparsity: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::structural(format!("initial sparsity {sparsity} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.total_len()];
    let mut fan_in = 1usize;
    for g in layout.groups() {
        if g.kind == GroupKind::Weight {
            fan_in = g.cols;
        }
        let std = (2.0 / fan_in as f64).sqrt();
        for v in &mut values[g.range()] {
            let z: f64 = StandardNormal.sample(&mut rng);
            let mag = std * z.abs();
            let negative = rng.random::<f64>() < sparsity;
            *v = if negative { -mag } else { mag };
        }
    }
    Ok(values)
}
