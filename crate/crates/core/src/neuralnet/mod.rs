//! Dense classifier with hand-written backpropagation.
//!
//! Layout per hidden layer: dense, ReLU, batch norm, and (first hidden layer
//! only) inverted dropout. The head is a dense layer with softmax. All
//! arithmetic is `f64`.
//!
//! [`ModelParams`] stores the layers as ndarray tensors and also exposes them
//! as an ordered list of flat slices (`W1, b1, gamma1, beta1, ..., W_out,
//! b_out`, then the running mean/variance of every batch-norm layer), which
//! is what aggregation, Adam and checkpointing operate on.

mod adam;
mod forward;
mod metrics;
mod snapshot;
mod train;

pub use adam::{adam_step, AdamState};
pub use forward::{forward, loss_and_grads, ForwardCache, Mode};
pub use metrics::{Confusion, EvalReport};
pub use train::{confusion, evaluate, train_local, LocalUpdate, TrainConfig};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenLayer {
    pub units: usize,
    /// Coefficient of `l2 * ||W||^2` on this layer's kernel.
    pub l2: f64,
}

fn default_bn_momentum() -> f64 {
    0.99
}

fn default_bn_epsilon() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<HiddenLayer>,
    pub dropout_p: f64,
    pub output_classes: usize,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_epsilon")]
    pub bn_epsilon: f64,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden: &[(usize, f64)], dropout_p: f64, output_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.iter().map(|&(units, l2)| HiddenLayer { units, l2 }).collect(),
            dropout_p,
            output_classes,
            bn_momentum: default_bn_momentum(),
            bn_epsilon: default_bn_epsilon(),
        }
    }

    /// 115 -> 128 -> 64 -> 3 with L2 0.001 on both hidden kernels and
    /// dropout 0.5 after the first hidden block.
    pub fn reference(input_dim: usize) -> Self {
        Self::new(input_dim, &[(128, 0.001), (64, 0.001)], 0.5, 3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_classes == 0 {
            return Err(Error::config("model input_dim and output_classes must be >= 1"));
        }
        if self.hidden.iter().any(|h| h.units == 0) {
            return Err(Error::config("hidden layer units must be >= 1"));
        }
        if self.hidden.iter().any(|h| !(h.l2 >= 0.0)) {
            return Err(Error::config("l2 coefficients must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p must be in [0,1)"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_epsilon > 0.0) {
            return Err(Error::config("bn_momentum must be in [0,1] and bn_epsilon > 0"));
        }
        Ok(())
    }

    /// Closed-form trainable count: dense `in*out + out` per layer plus
    /// `2 * units` per batch-norm layer.
    pub fn trainable_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut total = 0;
        for h in &self.hidden {
            total += fan_in * h.units + h.units + 2 * h.units;
            fan_in = h.units;
        }
        total + fan_in * self.output_classes + self.output_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBlock {
    pub dense: Dense,
    pub bn: BatchNorm,
}

/// Layer shape and role, in flat-tensor order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub hidden: Vec<HiddenBlock>,
    pub output: Dense,
}

impl ModelParams {
    /// All-zero parameters (and zero running stats) with the shape of `spec`.
    pub fn zeros(spec: &ModelSpec) -> Self {
        let mut fan_in = spec.input_dim;
        let hidden = spec
            .hidden
            .iter()
            .map(|h| {
                let block = HiddenBlock {
                    dense: Dense {
                        weight: Array2::zeros((fan_in, h.units)),
                        bias: Array1::zeros(h.units),
                    },
                    bn: BatchNorm {
                        gamma: Array1::zeros(h.units),
                        beta: Array1::zeros(h.units),
                        running_mean: Array1::zeros(h.units),
                        running_var: Array1::zeros(h.units),
                    },
                };
                fan_in = h.units;
                block
            })
            .collect();
        Self {
            spec: spec.clone(),
            hidden,
            output: Dense {
                weight: Array2::zeros((fan_in, spec.output_classes)),
                bias: Array1::zeros(spec.output_classes),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.spec)
    }

    pub fn layout(&self) -> Vec<TensorInfo> {
        let info = |name: String, shape: &[usize], trainable| TensorInfo {
            name,
            shape: shape.to_vec(),
            trainable,
        };
        let mut out = Vec::new();
        for (i, b) in self.hidden.iter().enumerate() {
            let n = i + 1;
            out.push(info(format!("dense{n}.weight"), b.dense.weight.shape(), true));
            out.push(info(format!("dense{n}.bias"), b.dense.bias.shape(), true));
            out.push(info(format!("bn{n}.gamma"), b.bn.gamma.shape(), true));
            out.push(info(format!("bn{n}.beta"), b.bn.beta.shape(), true));
        }
        out.push(info("output.weight".into(), self.output.weight.shape(), true));
        out.push(info("output.bias".into(), self.output.bias.shape(), true));
        for (i, b) in self.hidden.iter().enumerate() {
            let n = i + 1;
            out.push(info(format!("bn{n}.running_mean"), b.bn.running_mean.shape(), false));
            out.push(info(format!("bn{n}.running_var"), b.bn.running_var.shape(), false));
        }
        out
    }

    /// Flat views of every tensor, in [`layout`](Self::layout) order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.hidden {
            out.push(b.dense.weight.as_slice().expect("standard layout"));
            out.push(b.dense.bias.as_slice().expect("standard layout"));
            out.push(b.bn.gamma.as_slice().expect("standard layout"));
            out.push(b.bn.beta.as_slice().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice().expect("standard layout"));
        out.push(self.output.bias.as_slice().expect("standard layout"));
        for b in &self.hidden {
            out.push(b.bn.running_mean.as_slice().expect("standard layout"));
            out.push(b.bn.running_var.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut trainable: Vec<&mut [f64]> = Vec::new();
        let mut stats: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.hidden {
            trainable.push(b.dense.weight.as_slice_mut().expect("standard layout"));
            trainable.push(b.dense.bias.as_slice_mut().expect("standard layout"));
            trainable.push(b.bn.gamma.as_slice_mut().expect("standard layout"));
            trainable.push(b.bn.beta.as_slice_mut().expect("standard layout"));
            stats.push(b.bn.running_mean.as_slice_mut().expect("standard layout"));
            stats.push(b.bn.running_var.as_slice_mut().expect("standard layout"));
        }
        trainable.push(self.output.weight.as_slice_mut().expect("standard layout"));
        trainable.push(self.output.bias.as_slice_mut().expect("standard layout"));
        trainable.extend(stats);
        trainable
    }

    /// Number of leading tensors in flat order that are trainable.
    pub fn n_trainable_tensors(&self) -> usize {
        4 * self.hidden.len() + 2
    }

    pub fn trainable(&self) -> Vec<&[f64]> {
        let n = self.n_trainable_tensors();
        self.tensors().into_iter().take(n).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let n = self.n_trainable_tensors();
        self.tensors_mut().into_iter().take(n).collect()
    }

    /// Count of trainable scalars, obtained by walking the tensors.
    pub fn trainable_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Squared Euclidean distance over trainable tensors.
    pub fn trainable_sq_distance(&self, other: &ModelParams) -> f64 {
        self.trainable()
            .iter()
            .zip(other.trainable())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layout() == other.layout()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Seeded Glorot-uniform kernels, zero biases, `gamma = 1`, `beta = 0`,
/// running statistics `(0, 1)`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut params = ModelParams::zeros(spec);
    let mut rng = seeding::rng_for(seed, &[seeding::tag::INIT]);
    let mut glorot = |w: &mut Array2<f64>| {
        let (fan_in, fan_out) = w.dim();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        w.mapv_inplace(|_| rng.random_range(-limit..limit));
    };
    for b in &mut params.hidden {
        glorot(&mut b.dense.weight);
        b.bn.gamma.fill(1.0);
        b.bn.running_var.fill(1.0);
    }
    glorot(&mut params.output.weight);
    Ok(params)
}
