//! Fully-connected network with hand-written forward and backward passes.
//!
//! Weights of layer `l` live in group `w{l}` as a row-major `(out, in)` matrix and the
//! biases in `b{l}` (layers are numbered from 1). Hidden layers use the configured
//! activation; the output layer is affine for `mse` and softmax for `cross_entropy`.
//!
//! Losses are means over examples. `mse` is the half squared error summed over output
//! units, `1/n Σ_i ½‖y_i − t_i‖²`, so that a 1-in/1-out identity network without bias on
//! input `1` and target `c` has loss `½(w − c)²`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::batch::{Batch, Matrix, Targets};
use super::layout::{GradVector, GroupKind, LayerLayout, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    hidden: Activation,
    loss: LossKind,
    bias: bool,
    layout: Arc<LayerLayout>,
}

/// Per-layer values kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input of layer `l` (so `inputs[0]` is the batch itself).
    inputs: Vec<Matrix>,
    /// Pre-activations of every layer.
    pre: Vec<Matrix>,
}

impl Mlp {
    /// `widths` lists input width, hidden widths and output width in order.
    pub fn new(widths: Vec<usize>, hidden: Activation, loss: LossKind, bias: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::structural("an MLP needs at least input and output widths"));
        }
        if widths.contains(&0) {
            return Err(Error::structural("layer widths must be positive"));
        }
        let names: Vec<(String, String)> = (1..widths.len())
            .map(|l| (format!("w{l}"), format!("b{l}")))
            .collect();
        let mut shapes = Vec::new();
        for (l, (w, b)) in names.iter().enumerate() {
            shapes.push((w.as_str(), GroupKind::Weight, widths[l + 1], widths[l]));
            if bias {
                shapes.push((b.as_str(), GroupKind::Bias, widths[l + 1], 1));
            }
        }
        let layout = Arc::new(LayerLayout::from_shapes(shapes)?);
        Ok(Self {
            widths,
            hidden,
            loss,
            bias,
            layout,
        })
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::structural("parameter layout does not match the architecture"));
        }
        Ok(())
    }

    fn weights<'a>(&self, params: &'a ParamVector, layer: usize) -> (&'a [f64], Option<&'a [f64]>) {
        let groups = self.layout.groups();
        let per_layer = if self.bias { 2 } else { 1 };
        let w = &groups[layer * per_layer];
        let b = self.bias.then(|| &params.values()[groups[layer * per_layer + 1].range()]);
        (&params.values()[w.range()], b)
    }

    /// Logits (pre-activations of the last layer) and the cache.
    fn forward_logits(&self, params: &ParamVector, inputs: &Matrix) -> Result<ForwardCache> {
        self.check_params(params)?;
        if inputs.cols() != self.input_width() {
            return Err(Error::structural(format!(
                "input width {} does not match network input {}",
                inputs.cols(),
                self.input_width()
            )));
        }
        let n = inputs.rows();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.n_layers()),
            pre: Vec::with_capacity(self.n_layers()),
        };
        let mut current = inputs.clone();
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (w, b) = self.weights(params, l);
            let mut z = Matrix::zeros(n, fan_out);
            for i in 0..n {
                let x = current.row(i);
                let zi = z.row_mut(i);
                for (o, out) in zi.iter_mut().enumerate() {
                    let wrow = &w[o * fan_in..(o + 1) * fan_in];
                    let mut acc = 0.0;
                    for (a, c) in wrow.iter().zip(x) {
                        acc += a * c;
                    }
                    if let Some(b) = b {
                        acc += b[o];
                    }
                    *out = acc;
                }
            }
            if z.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical(
                    format!("layer w{}", l + 1),
                    "non-finite value in forward pass",
                ));
            }
            let next = if l + 1 < self.n_layers() {
                let mut a = z.clone();
                if self.hidden == Activation::Relu {
                    for v in a.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                a
            } else {
                Matrix::zeros(0, 0)
            };
            cache.inputs.push(std::mem::replace(&mut current, next));
            cache.pre.push(z);
        }
        Ok(cache)
    }

    /// Network outputs for `inputs`; rows are probabilities when the loss is cross-entropy.
    pub fn forward(&self, params: &ParamVector, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let cache = self.forward_logits(params, inputs)?;
        let logits = cache.pre.last().expect("at least one layer");
        let out = match self.loss {
            LossKind::Mse => logits.clone(),
            LossKind::CrossEntropy => softmax_rows(logits),
        };
        Ok((out, cache))
    }

    pub fn predict(&self, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
        self.forward(params, inputs).map(|(out, _)| out)
    }

    pub fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        let cache = self.forward_logits(params, &batch.inputs)?;
        let (loss, _) = self.loss_and_output_delta(cache.pre.last().unwrap(), &batch.targets, false)?;
        Ok(loss)
    }

    /// Mean loss over the batch and its exact gradient.
    pub fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, GradVector)> {
        let cache = self.forward_logits(params, &batch.inputs)?;
        let (loss, delta) = self.loss_and_output_delta(cache.pre.last().unwrap(), &batch.targets, true)?;
        let grad = self.backward(params, &cache, delta.expect("delta requested"))?;
        if !loss.is_finite() {
            return Err(Error::numerical("loss", "non-finite loss"));
        }
        Ok((loss, grad))
    }

    /// Loss, accuracy (classification only) for a batch.
    pub fn evaluate(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, Option<f64>)> {
        let cache = self.forward_logits(params, &batch.inputs)?;
        let logits = cache.pre.last().unwrap();
        let (loss, _) = self.loss_and_output_delta(logits, &batch.targets, false)?;
        let acc = match &batch.targets {
            Targets::Classes { labels, .. } => Some(accuracy_from_logits(logits, labels)),
            Targets::Regression(_) => None,
        };
        Ok((loss, acc))
    }

    fn loss_and_output_delta(
        &self,
        logits: &Matrix,
        targets: &Targets,
        want_delta: bool,
    ) -> Result<(f64, Option<Matrix>)> {
        let n = logits.rows();
        if targets.len() != n {
            return Err(Error::structural("target count does not match batch size"));
        }
        let inv_n = 1.0 / n as f64;
        let d = logits.cols();
        let mut delta = want_delta.then(|| Matrix::zeros(n, d));
        let mut total = 0.0;
        match (self.loss, targets) {
            (LossKind::Mse, Targets::Regression(t)) => {
                if t.cols() != d {
                    return Err(Error::structural("target width does not match output width"));
                }
                for i in 0..n {
                    let (y, ti) = (logits.row(i), t.row(i));
                    let mut sq = 0.0;
                    for j in 0..d {
                        let r = y[j] - ti[j];
                        sq += r * r;
                        if let Some(delta) = delta.as_mut() {
                            delta.row_mut(i)[j] = r * inv_n;
                        }
                    }
                    total += 0.5 * sq;
                }
            }
            (LossKind::CrossEntropy, Targets::Classes { labels, n_classes }) => {
                if *n_classes != d {
                    return Err(Error::structural(format!(
                        "{n_classes} classes but {d} output units"
                    )));
                }
                for (i, &label) in labels.iter().enumerate() {
                    let z = logits.row(i);
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                    let log_norm = max + sum.ln();
                    total += log_norm - z[label];
                    if let Some(delta) = delta.as_mut() {
                        let row = delta.row_mut(i);
                        for j in 0..d {
                            let p = (z[j] - log_norm).exp();
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            row[j] = (p - onehot) * inv_n;
                        }
                    }
                }
            }
            _ => return Err(Error::structural("loss kind does not match target kind")),
        }
        Ok((total * inv_n, delta))
    }

    fn backward(&self, params: &ParamVector, cache: &ForwardCache, mut delta: Matrix) -> Result<GradVector> {
        let mut grad = vec![0.0; self.layout.total_len()];
        let groups = self.layout.groups();
        let per_layer = if self.bias { 2 } else { 1 };
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let input = &cache.inputs[l];
            let n = input.rows();
            let wg = &groups[l * per_layer];
            {
                let gw = &mut grad[wg.range()];
                for i in 0..n {
                    let di = delta.row(i);
                    let xi = input.row(i);
                    for o in 0..fan_out {
                        let d = di[o];
                        if d == 0.0 {
                            continue;
                        }
                        let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                        for (g, x) in row.iter_mut().zip(xi) {
                            *g += d * x;
                        }
                    }
                }
            }
            if self.bias {
                let gb = &mut grad[groups[l * per_layer + 1].range()];
                for i in 0..n {
                    for (g, d) in gb.iter_mut().zip(delta.row(i)) {
                        *g += d;
                    }
                }
            }
            if l > 0 {
                let (w, _) = self.weights(params, l);
                let pre = &cache.pre[l - 1];
                let mut prev = Matrix::zeros(n, fan_in);
                for i in 0..n {
                    let di = delta.row(i);
                    let pi = prev.row_mut(i);
                    for o in 0..fan_out {
                        let d = di[o];
                        if d == 0.0 {
                            continue;
                        }
                        let wrow = &w[o * fan_in..(o + 1) * fan_in];
                        for (p, wv) in pi.iter_mut().zip(wrow) {
                            *p += d * wv;
                        }
                    }
                    if self.hidden == Activation::Relu {
                        for (p, z) in pi.iter_mut().zip(pre.row(i)) {
                            if *z <= 0.0 {
                                *p = 0.0;
                            }
                        }
                    }
                }
                delta = prev;
            }
        }
        let grad = GradVector::new(grad);
        if !grad.is_finite() {
            return Err(Error::numerical("backward", "non-finite gradient"));
        }
        Ok(grad)
    }

    /// Central-difference gradient `(L(θ+h·e_i) − L(θ−h·e_i)) / 2h`, one coordinate at a time.
    pub fn finite_diff_grad(&self, params: &ParamVector, batch: &Batch, h: f64) -> Result<GradVector> {
        if !(h > 0.0) {
            return Err(Error::Precondition("finite-difference step must be positive".into()));
        }
        let mut probe = params.clone();
        let mut out = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + h;
            let plus = self.loss(&probe, batch)?;
            probe.values_mut()[i] = orig - h;
            let minus = self.loss(&probe, batch)?;
            probe.values_mut()[i] = orig;
            out.push((plus - minus) / (2.0 * h));
        }
        Ok(GradVector::new(out))
    }
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Fraction of rows whose arg-max (first on ties) equals the label.
pub fn accuracy_from_logits(outputs: &Matrix, labels: &[usize]) -> f64 {
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = outputs.row(i);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}
