use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::TrainError;
use crate::numerics::Rng;
use crate::optim::ParamGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        match self.kind {
            ModelKind::LogisticRegression if !self.hidden_sizes.is_empty() => Err(
                TrainError::InvalidSpec("logistic_regression takes no hidden layers".into()),
            ),
            ModelKind::Mlp if self.hidden_sizes.is_empty() => {
                Err(TrainError::InvalidSpec("mlp needs at least one hidden layer".into()))
            }
            _ if self.hidden_sizes.contains(&0) => {
                Err(TrainError::InvalidSpec("hidden sizes must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Fully connected network. Group `2l` is layer `l`'s weight matrix
/// (row-major, `out × in`), group `2l + 1` its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    dims: Vec<usize>,
    activation: Activation,
    groups: Vec<ParamGroup>,
}

impl Model {
    /// Glorot-uniform weights, zero biases.
    pub fn new(spec: &ModelSpec, n_features: usize, n_classes: usize) -> Result<Self, TrainError> {
        spec.validate()?;
        let mut dims = vec![n_features];
        dims.extend(&spec.hidden_sizes);
        dims.push(n_classes);
        let mut rng = Rng::new(spec.seed);
        let mut groups = Vec::with_capacity(2 * (dims.len() - 1));
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-limit, limit))
                .collect();
            groups.push(ParamGroup::new(format!("layer{l}.weight"), w));
            groups.push(ParamGroup::new(format!("layer{l}.bias"), vec![0.0; fan_out]));
        }
        Ok(Self {
            dims,
            activation: spec.activation,
            groups,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_classes(&self) -> usize {
        *self.dims.last().expect("at least one layer")
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }

    pub fn is_weight_group(index: usize) -> bool {
        index.is_multiple_of(2)
    }

    pub fn param_count(&self) -> usize {
        self.groups.iter().map(ParamGroup::len).sum()
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Pre-activations and activations of every layer for one input.
    fn forward_one(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.n_layers());
        let mut acts = vec![x.to_vec()];
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.groups[2 * l].values;
            let b = &self.groups[2 * l + 1].values;
            let a = acts.last().expect("input present");
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            if l + 1 < self.n_layers() {
                acts.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            }
            zs.push(z);
        }
        (zs, acts)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward_one(x).0.pop().expect("output layer")
    }
}

/// `(logsumexp(z) − z_y, softmax(z))`.
fn cross_entropy(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = max + sum.ln() - z[label];
    (loss, exps.into_iter().map(|e| e / sum).collect())
}

/// Mean cross-entropy over `indices` and its exact gradient per group.
pub fn forward_backward(
    model: &Model,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let scale = 1.0 / indices.len() as f64;
    let mut grads: Vec<Vec<f64>> = model.groups.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut total = 0.0;
    let n_layers = model.n_layers();
    for &i in indices {
        let (zs, acts) = model.forward_one(data.features.row(i));
        let (loss, probs) = cross_entropy(&zs[n_layers - 1], data.labels[i]);
        total += loss;
        let mut delta = probs;
        delta[data.labels[i]] -= 1.0;
        delta.iter_mut().for_each(|d| *d *= scale);
        for l in (0..n_layers).rev() {
            let n_in = model.dims[l];
            let a_prev = &acts[l];
            let (gw, rest) = grads[2 * l..].split_at_mut(1);
            for (o, &d) in delta.iter().enumerate() {
                rest[0][o] += d;
                let row = &mut gw[0][o * n_in..(o + 1) * n_in];
                row.iter_mut().zip(a_prev).for_each(|(g, a)| *g += d * a);
            }
            if l > 0 {
                let w = &model.groups[2 * l].values;
                delta = (0..n_in)
                    .map(|j| {
                        let back: f64 = delta
                            .iter()
                            .enumerate()
                            .map(|(o, d)| w[o * n_in + j] * d)
                            .sum();
                        back * model.activation.grad(zs[l - 1][j], a_prev[j])
                    })
                    .collect();
            }
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss(loss));
    }
    Ok((loss, grads))
}

/// Mean cross-entropy and accuracy over the whole dataset.
pub fn evaluate(model: &Model, data: &Dataset) -> (f64, f64) {
    if data.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let z = model.logits(data.features.row(i));
        loss += cross_entropy(&z, data.labels[i]).0;
        let pred = z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
            .0;
        correct += usize::from(pred == data.labels[i]);
    }
    let n = data.len() as f64;
    (loss / n, correct as f64 / n)
}
