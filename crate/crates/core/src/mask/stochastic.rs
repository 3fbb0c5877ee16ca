//! Masks generated from a low-dimensional Gaussian latent: `m = A (z ∘ σ + μ) + b`.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MaskParams;
use crate::error::{Error, Result};
use crate::nn::{check_len, GradVector, GroupKind, LayerLayout};

pub const DEFAULT_LATENT_DIM: usize = 1600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticMaskGenerator {
    /// Row-major `[n × latent_dim]`.
    a: Vec<f64>,
    b: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    latent_dim: usize,
    target_groups: Vec<String>,
}

/// First-order gradient of the generator parameters for one sampled mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorGrad {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GeneratorGrad {
    pub fn zeros_like(gen: &StochasticMaskGenerator) -> Self {
        Self {
            a: vec![0.0; gen.a.len()],
            b: vec![0.0; gen.b.len()],
            mu: vec![0.0; gen.mu.len()],
            sigma: vec![0.0; gen.sigma.len()],
        }
    }

    pub fn add_assign(&mut self, other: &GeneratorGrad) {
        for (x, y) in [
            (&mut self.a, &other.a),
            (&mut self.b, &other.b),
            (&mut self.mu, &other.mu),
            (&mut self.sigma, &other.sigma),
        ] {
            for (p, q) in x.iter_mut().zip(y) {
                *p += q;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.a.iter_mut().chain(&mut self.b).chain(&mut self.mu).chain(&mut self.sigma) {
            *v *= factor;
        }
    }
}

impl StochasticMaskGenerator {
    pub fn from_parts(
        a: Vec<f64>,
        b: Vec<f64>,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        target_groups: Vec<String>,
    ) -> Result<Self> {
        let e = mu.len();
        if sigma.len() != e {
            return Err(Error::structural("mu and sigma must have the latent dimension"));
        }
        if a.len() != b.len() * e {
            return Err(Error::structural(format!(
                "A has {} entries, expected {}x{}",
                a.len(),
                b.len(),
                e
            )));
        }
        if a.iter().chain(&b).chain(&mu).chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::numerical("mask generator", "non-finite generator parameter"));
        }
        Ok(Self {
            a,
            b,
            mu,
            sigma,
            latent_dim: e,
            target_groups,
        })
    }

    /// Generator over `target_groups` with `b` taken from `base_m` on those groups, `μ = 0`,
    /// `σ = 1` and Gaussian `A` with entry std `a_scale / sqrt(latent_dim)`.
    pub fn init<R: Rng + ?Sized>(
        layout: &LayerLayout,
        target_groups: Vec<String>,
        latent_dim: usize,
        base_m: &[f64],
        a_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_len(base_m.len(), layout.total_len())?;
        if latent_dim == 0 {
            return Err(Error::structural("latent dimension must be positive"));
        }
        let mut b = Vec::new();
        for name in &target_groups {
            let g = layout
                .group(name)
                .ok_or_else(|| Error::structural(format!("unknown target group `{name}`")))?;
            b.extend_from_slice(&base_m[g.range()]);
        }
        let std = a_scale / (latent_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::structural(e.to_string()))?;
        let a = (0..b.len() * latent_dim).map(|_| normal.sample(rng)).collect();
        Self::from_parts(a, b, vec![0.0; latent_dim], vec![1.0; latent_dim], target_groups)
    }

    /// Hidden-layer weight groups: every weight group except the output layer's.
    pub fn hidden_weight_groups(layout: &LayerLayout) -> Vec<String> {
        let weights: Vec<_> = layout.groups().iter().filter(|g| g.kind == GroupKind::Weight).collect();
        weights[..weights.len().saturating_sub(1)].iter().map(|g| g.name.clone()).collect()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn n_outputs(&self) -> usize {
        self.b.len()
    }

    pub fn target_groups(&self) -> &[String] {
        &self.target_groups
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// `m` for the target coordinates given a latent `z`.
    pub fn generate(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(z.len(), self.latent_dim)?;
        let h: Vec<f64> = z.iter().zip(&self.sigma).zip(&self.mu).map(|((z, s), m)| z * s + m).collect();
        let e = self.latent_dim;
        Ok(self
            .b
            .iter()
            .enumerate()
            .map(|(i, bi)| {
                let row = &self.a[i * e..(i + 1) * e];
                row.iter().zip(&h).map(|(a, h)| a * h).sum::<f64>() + bi
            })
            .collect())
    }

    /// Draws `z ~ N(0, I)` and returns `(m on the target groups, z)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let z: Vec<f64> = (0..self.latent_dim).map(|_| StandardNormal.sample(rng)).collect();
        let m = self.generate(&z)?;
        Ok((m, z))
    }

    /// Full mask: `base` outside the target groups, `generated` inside them.
    pub fn materialize(&self, base: &MaskParams, layout: &LayerLayout, generated: &[f64]) -> Result<MaskParams> {
        check_len(generated.len(), self.n_outputs())?;
        let mut mask = base.clone();
        let mut pos = 0;
        for name in &self.target_groups {
            let g = layout
                .group(name)
                .ok_or_else(|| Error::structural(format!("unknown target group `{name}`")))?;
            mask.m_mut()[g.range()].copy_from_slice(&generated[pos..pos + g.len()]);
            pos += g.len();
        }
        Ok(mask)
    }

    /// Restricts a full-length direction to the target coordinates (in target order).
    pub fn restrict(&self, layout: &LayerLayout, direction: &GradVector) -> Result<GradVector> {
        check_len(direction.len(), layout.total_len())?;
        let mut out = Vec::with_capacity(self.n_outputs());
        for name in &self.target_groups {
            let g = layout
                .group(name)
                .ok_or_else(|| Error::structural(format!("unknown target group `{name}`")))?;
            out.extend_from_slice(&direction.values()[g.range()]);
        }
        Ok(GradVector::new(out))
    }

    /// Chain rule through the affine map, with the step function passed straight through:
    /// `dA = d hᵀ`, `db = d`, `dμ = Aᵀ d`, `dσ = (Aᵀ d) ∘ z`, where `h = z ∘ σ + μ`.
    pub fn gradient(&self, direction: &GradVector, z: &[f64]) -> Result<GeneratorGrad> {
        if z.len() != self.latent_dim {
            return Err(Error::structural(format!(
                "latent has {} entries, generator expects {}",
                z.len(),
                self.latent_dim
            )));
        }
        check_len(direction.len(), self.n_outputs())?;
        let e = self.latent_dim;
        let h: Vec<f64> = z.iter().zip(&self.sigma).zip(&self.mu).map(|((z, s), m)| z * s + m).collect();
        let d = direction.values();
        let mut ga = vec![0.0; self.a.len()];
        let mut at_d = vec![0.0; e];
        for (i, &di) in d.iter().enumerate() {
            let row = &self.a[i * e..(i + 1) * e];
            let grow = &mut ga[i * e..(i + 1) * e];
            for j in 0..e {
                grow[j] = di * h[j];
                at_d[j] += row[j] * di;
            }
        }
        let gsigma = at_d.iter().zip(z).map(|(g, z)| g * z).collect();
        Ok(GeneratorGrad {
            a: ga,
            b: d.to_vec(),
            mu: at_d,
            sigma: gsigma,
        })
    }

    /// Ascends all four generator parameters: `p += step · grad_p`.
    pub fn apply(&mut self, grad: &GeneratorGrad, step: f64) -> Result<()> {
        for (p, g) in [
            (&mut self.a, &grad.a),
            (&mut self.b, &grad.b),
            (&mut self.mu, &grad.mu),
            (&mut self.sigma, &grad.sigma),
        ] {
            check_len(p.len(), g.len())?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("mask generator", "non-finite generator gradient"));
            }
            for (p, g) in p.iter_mut().zip(g) {
                *p += step * g;
            }
        }
        Ok(())
    }

    /// One-sample update; `step` is the full multiplier (`α γ_m` for binary masks).
    pub fn update(&mut self, direction: &GradVector, z: &[f64], step: f64) -> Result<()> {
        let grad = self.gradient(direction, z)?;
        self.apply(&grad, step)
    }
}
