use ndarray::{s, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, forward, loss_and_grads, AdamState, Confusion, EvalReport, Mode, ModelParams};
use crate::datakit::Dataset;
use crate::error::{Error, Result};
use crate::seeding::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Proximal coefficient; 0 disables the term.
    pub prox_mu: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-7,
            prox_mu: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam betas must be in [0,1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("adam_epsilon must be > 0"));
        }
        if !(self.prox_mu >= 0.0) {
            return Err(Error::config("prox_mu must be >= 0"));
        }
        Ok(())
    }
}

/// Result of one client's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub params: ModelParams,
    /// Sample-weighted mean training loss per epoch.
    pub loss_history: Vec<f64>,
    pub optimizer_steps: u64,
}

/// `tc.epochs` passes of seeded-shuffled mini-batch Adam over `ds`, starting
/// from `params`. The proximal term (when `tc.prox_mu > 0`) anchors on
/// `w_global`. Adam moments start from zero on every call.
pub fn train_local(
    params: &ModelParams,
    ds: &Dataset,
    tc: &TrainConfig,
    w_global: Option<&ModelParams>,
) -> Result<LocalUpdate> {
    tc.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset("local training needs at least one sample"));
    }
    let mut params = params.clone();
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        order.shuffle(&mut seeding::rng_for(tc.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let x = ds.features.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| ds.labels[i]).collect();
            let dropout_seed = seeding::derive(tc.seed, &[tag::DROPOUT, epoch as u64, b as u64]);
            let (loss, grads, cache) =
                loss_and_grads(&params, x.view(), &y, Mode::Train, dropout_seed, tc.prox_mu, w_global)?;
            adam_step(&mut params, &grads, &mut state, tc)?;
            params.update_running_stats(&cache);
            total += loss * chunk.len() as f64;
        }
        history.push(total / ds.len() as f64);
    }
    Ok(LocalUpdate {
        params,
        loss_history: history,
        optimizer_steps: state.step,
    })
}

const EVAL_CHUNK: usize = 1024;

/// Eval-mode confusion counts and summed cross-entropy over `ds`.
pub fn confusion(params: &ModelParams, ds: &Dataset) -> Result<Confusion> {
    let mut conf = Confusion::new(params.spec.output_classes);
    let mut start = 0;
    while start < ds.len() {
        let end = (start + EVAL_CHUNK).min(ds.len());
        let x = ds.features.slice(s![start..end, ..]);
        let labels = &ds.labels[start..end];
        if let Some(&bad) = labels.iter().find(|&&y| y >= params.spec.output_classes) {
            return Err(Error::invalid(format!("label {bad} outside the model's classes")));
        }
        let cache = forward(params, x, Mode::Eval, 0)?;
        conf.loss_sum += cache.per_sample_cross_entropy(labels).sum();
        for (row, &y) in cache.probs.outer_iter().zip(labels) {
            conf.record(y, argmax(row.as_slice().expect("contiguous row")));
        }
        start = end;
    }
    Ok(conf)
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("evaluation needs at least one sample"));
    }
    Ok(confusion(params, ds)?.report())
}
