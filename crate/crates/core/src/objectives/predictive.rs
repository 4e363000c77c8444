//! Softmax classifiers with rectifier hidden layers and hand-written
//! backpropagation.
//!
//! Parameter layout, layer by layer: the `fan_out × fan_in` weight matrix in
//! row-major order (row = output unit), followed by the `fan_out` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{check_len, Error, Result};
use crate::numeric::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveObjective {
    kind: ModelKind,
    /// `[d_in, hidden…, num_classes]`.
    layer_sizes: Vec<usize>,
}

impl PredictiveObjective {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::build(ModelKind::LogisticRegression, vec![input_dim, num_classes])
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(num_classes);
        Self::build(ModelKind::Mlp, sizes)
    }

    fn build(kind: ModelKind, layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::usage("layer sizes must be positive"));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::usage("classifier needs at least 2 classes"));
        }
        Ok(PredictiveObjective { kind, layer_sizes })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut params = Vec::with_capacity(self.param_count());
        for w in self.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector::new(params)
    }

    fn check(&self, w: &[f64], data: &LabeledDataset) -> Result<()> {
        check_len(self.param_count(), w.len())?;
        check_len(self.input_dim(), data.dim())?;
        if data.num_classes() > self.num_classes() {
            return Err(Error::usage(format!(
                "dataset has {} classes, model outputs {}",
                data.num_classes(),
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy over `indices`.
    pub fn loss(&self, w: &[f64], data: &LabeledDataset, indices: &[usize]) -> Result<f64> {
        self.check(w, data)?;
        if indices.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        let mut ws = Workspace::new(&self.layer_sizes);
        let mut total = 0.0;
        for &i in indices {
            total += self.sample_loss(w, data, i, &mut ws, None);
        }
        Ok(total / indices.len() as f64)
    }

    /// Writes the mean gradient over `indices` into `grad` and returns the
    /// mean loss.
    pub fn loss_and_gradient(
        &self,
        w: &[f64],
        data: &LabeledDataset,
        indices: &[usize],
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check(w, data)?;
        check_len(w.len(), grad.len())?;
        if indices.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ws = Workspace::new(&self.layer_sizes);
        let mut total = 0.0;
        for &i in indices {
            total += self.sample_loss(w, data, i, &mut ws, Some(grad));
        }
        let scale = 1.0 / indices.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(total * scale)
    }

    /// Index of the highest class score; ties go to the lowest index.
    pub fn predict(&self, w: &[f64], features: &[f64]) -> usize {
        let mut ws = Workspace::new(&self.layer_sizes);
        self.forward(w, features, &mut ws);
        argmax(ws.acts.last().unwrap())
    }

    pub fn accuracy(&self, w: &[f64], data: &LabeledDataset) -> Result<f64> {
        self.check(w, data)?;
        if data.is_empty() {
            return Err(Error::usage("accuracy over an empty dataset"));
        }
        let mut ws = Workspace::new(&self.layer_sizes);
        let mut correct = 0usize;
        for i in 0..data.len() {
            self.forward(w, data.features(i), &mut ws);
            if argmax(ws.acts.last().unwrap()) == data.label(i) {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Fills `ws.acts` (last entry = logits).
    fn forward(&self, w: &[f64], x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        let layers = self.layer_sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let weights = &w[offset..offset + fan_in * fan_out];
            let bias = &w[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut z = bias[o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    z += wi * xi;
                }
                out[o] = if l + 1 < layers { z.max(0.0) } else { z };
            }
        }
    }

    fn sample_loss(
        &self,
        w: &[f64],
        data: &LabeledDataset,
        i: usize,
        ws: &mut Workspace,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        self.forward(w, data.features(i), ws);
        let label = data.label(i);
        let logits = ws.acts.last().unwrap();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum_exp.ln();
        // lse ≥ z_label, so the loss is non-negative up to rounding
        let loss = (lse - logits[label]).max(0.0);

        let Some(grad) = grad else {
            return loss;
        };

        let layers = self.layer_sizes.len() - 1;
        {
            let delta = &mut ws.deltas[layers - 1];
            for (c, d) in delta.iter_mut().enumerate() {
                *d = (logits[c] - lse).exp();
            }
            delta[label] -= 1.0;
        }

        let mut offset = self.param_count();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            offset -= (fan_in + 1) * fan_out;
            let (gw, gb) = grad[offset..offset + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            let input = &ws.acts[l];
            let delta = &ws.deltas[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, x) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l > 0 {
                let weights = &w[offset..offset + fan_in * fan_out];
                let (lower, upper) = ws.deltas.split_at_mut(l);
                let prev = &mut lower[l - 1];
                let delta = &upper[0];
                prev.iter_mut().for_each(|p| *p = 0.0);
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * wi;
                    }
                }
                // rectifier derivative; acts[l] is post-activation
                for (p, a) in prev.iter_mut().zip(&ws.acts[l]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
        loss
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

struct Workspace {
    /// acts[0] = input, acts[l] = output of layer l.
    acts: Vec<Vec<f64>>,
    /// deltas[l] = dLoss/dz for layer l+1's pre-activation.
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(sizes: &[usize]) -> Self {
        Workspace {
            acts: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            deltas: sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
        }
    }
}
