use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm, dropout active.
    Train,
    /// Running statistics in batch norm, dropout is the identity.
    Eval,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array2<f64>,
    pre_relu: Array2<f64>,
    normalized: Array2<f64>,
    /// `1 / sqrt(var + eps)` for the statistics used in this pass.
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    /// Inverted-dropout multipliers (0 or `1/(1-p)`), if dropout ran.
    mask: Option<Array2<f64>>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    blocks: Vec<BlockCache>,
    head_input: Array2<f64>,
    logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl ForwardCache {
    /// Mean cross-entropy of `labels` under this pass's logits.
    pub fn cross_entropy(&self, labels: &[usize]) -> f64 {
        let n = labels.len().max(1) as f64;
        self.per_sample_cross_entropy(labels).sum() / n
    }

    pub(crate) fn per_sample_cross_entropy(&self, labels: &[usize]) -> Array1<f64> {
        Array1::from_iter(self.logits.outer_iter().zip(labels).map(|(row, &y)| {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            lse - row[y]
        }))
    }
}

impl ModelParams {
    /// Fold the batch statistics of a train-mode pass into the running
    /// statistics: `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.spec.bn_momentum;
        for (block, c) in self.hidden.iter_mut().zip(&cache.blocks) {
            Zip::from(&mut block.bn.running_mean)
                .and(&c.batch_mean)
                .for_each(|r, &b| *r = m * *r + (1.0 - m) * b);
            Zip::from(&mut block.bn.running_var)
                .and(&c.batch_var)
                .for_each(|r, &b| *r = m * *r + (1.0 - m) * b);
        }
    }
}

/// Run `x` through the network. Rows of the returned probabilities sum to 1.
///
/// `seed` drives the dropout mask; it is ignored in eval mode. A train-mode
/// pass does not touch the running statistics; pass the cache to
/// [`ModelParams::update_running_stats`] for that.
pub fn forward(params: &ModelParams, x: ArrayView2<f64>, mode: Mode, seed: u64) -> Result<ForwardCache> {
    if x.ncols() != params.spec.input_dim {
        return Err(Error::shape(format!(
            "batch has {} columns, model expects {}",
            x.ncols(),
            params.spec.input_dim
        )));
    }
    let eps = params.spec.bn_epsilon;
    let n = x.nrows();
    let mut act = x.to_owned();
    let mut blocks = Vec::with_capacity(params.hidden.len());
    for (i, block) in params.hidden.iter().enumerate() {
        let input = act;
        let pre_relu = input.dot(&block.dense.weight) + &block.dense.bias;
        let relu = pre_relu.mapv(|v| v.max(0.0));

        let (batch_mean, batch_var) = if n > 0 {
            let mean = relu.mean_axis(Axis(0)).expect("non-empty");
            let var = relu.var_axis(Axis(0), 0.0);
            (mean, var)
        } else {
            (Array1::zeros(relu.ncols()), Array1::zeros(relu.ncols()))
        };
        let (mean, var) = match mode {
            Mode::Train => (&batch_mean, &batch_var),
            Mode::Eval => (&block.bn.running_mean, &block.bn.running_var),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let normalized = (&relu - mean) * &inv_std;
        let mut out = &normalized * &block.bn.gamma + &block.bn.beta;

        let p = params.spec.dropout_p;
        let mask = if mode == Mode::Train && i == 0 && p > 0.0 {
            let mut rng = seeding::rng_for(seed, &[seeding::tag::DROPOUT]);
            let keep = 1.0 / (1.0 - p);
            let mask = Array2::from_shape_fn(out.raw_dim(), |_| if rng.random::<f64>() >= p { keep } else { 0.0 });
            out *= &mask;
            Some(mask)
        } else {
            None
        };

        blocks.push(BlockCache {
            input,
            pre_relu,
            normalized,
            inv_std,
            batch_mean,
            batch_var,
            mask,
        });
        act = out;
    }
    let logits = act.dot(&params.output.weight) + &params.output.bias;
    let mut probs = logits.clone();
    for mut row in probs.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row /= s;
    }
    Ok(ForwardCache {
        mode,
        blocks,
        head_input: act,
        logits,
        probs,
    })
}

/// Exact partial derivatives of `cache`'s mean cross-entropy w.r.t. the
/// trainable tensors. Running-stat slots of the result are zero.
fn backward(params: &ModelParams, cache: &ForwardCache, labels: &[usize]) -> ModelParams {
    let n = labels.len() as f64;
    let mut grads = params.zeros_like();

    let mut delta = cache.probs.clone();
    for (mut row, &y) in delta.outer_iter_mut().zip(labels) {
        row[y] -= 1.0;
    }
    delta /= n;

    grads.output.weight = cache.head_input.t().dot(&delta);
    grads.output.bias = delta.sum_axis(Axis(0));
    let mut upstream = delta.dot(&params.output.weight.t());

    for (i, (block, c)) in params.hidden.iter().zip(&cache.blocks).enumerate().rev() {
        if let Some(mask) = &c.mask {
            upstream *= mask;
        }
        let g = &mut grads.hidden[i];
        g.bn.gamma = (&upstream * &c.normalized).sum_axis(Axis(0));
        g.bn.beta = upstream.sum_axis(Axis(0));
        let d_norm = &upstream * &block.bn.gamma;
        let d_relu = match cache.mode {
            Mode::Eval => d_norm * &c.inv_std,
            Mode::Train => {
                // dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                let sum_d = d_norm.sum_axis(Axis(0));
                let sum_dx = (&d_norm * &c.normalized).sum_axis(Axis(0));
                let centered = &d_norm * n - &sum_d - &c.normalized * &sum_dx;
                centered * &(&c.inv_std / n)
            }
        };
        let mut d_pre = d_relu;
        Zip::from(&mut d_pre)
            .and(&c.pre_relu)
            .for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
        g.dense.weight = c.input.t().dot(&d_pre);
        g.dense.bias = d_pre.sum_axis(Axis(0));
        if i > 0 {
            upstream = d_pre.dot(&block.dense.weight.t());
        }
    }
    grads
}

/// Loss and exact gradients of
/// `mean CE + sum_i l2_i * ||W_i||^2 + (mu / 2) * ||theta - theta_global||^2`.
///
/// The L2 sum runs over hidden-layer kernels; the proximal term over every
/// trainable tensor. Returns the forward cache too so callers can update
/// running statistics.
pub fn loss_and_grads(
    params: &ModelParams,
    x: ArrayView2<f64>,
    labels: &[usize],
    mode: Mode,
    seed: u64,
    prox_mu: f64,
    w_global: Option<&ModelParams>,
) -> Result<(f64, ModelParams, ForwardCache)> {
    if x.nrows() != labels.len() {
        return Err(Error::shape(format!("{} rows but {} labels", x.nrows(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset("loss needs at least one sample"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= params.spec.output_classes) {
        return Err(Error::invalid(format!("label {bad} outside the model's classes")));
    }
    if prox_mu < 0.0 {
        return Err(Error::invalid("proximal mu must be >= 0"));
    }
    let anchor = match (prox_mu > 0.0, w_global) {
        (true, None) => return Err(Error::invalid("proximal mu > 0 requires the global model")),
        (true, Some(g)) if !g.same_shape(params) => {
            return Err(Error::shape("global model shape differs from local model"))
        }
        (true, Some(g)) => Some(g),
        (false, _) => None,
    };

    let cache = forward(params, x, mode, seed)?;
    let mut loss = cache.cross_entropy(labels);
    let mut grads = backward(params, &cache, labels);

    for ((block, g), layer) in params.hidden.iter().zip(&mut grads.hidden).zip(&params.spec.hidden) {
        if layer.l2 > 0.0 {
            loss += layer.l2 * block.dense.weight.iter().map(|w| w * w).sum::<f64>();
            g.dense.weight.scaled_add(2.0 * layer.l2, &block.dense.weight);
        }
    }

    if let Some(anchor) = anchor {
        loss += 0.5 * prox_mu * params.trainable_sq_distance(anchor);
        for ((g, p), a) in grads.trainable_mut().into_iter().zip(params.trainable()).zip(anchor.trainable()) {
            for ((gi, &pi), &ai) in g.iter_mut().zip(p).zip(a) {
                *gi += prox_mu * (pi - ai);
            }
        }
    }
    Ok((loss, grads, cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{build_model, ModelSpec};
    use ndarray::array;
    use rand::Rng;

    fn random_batch(n: usize, d: usize, classes: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = seeding::rng(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
        (x, y)
    }

    #[test]
    fn rows_sum_to_one() {
        let spec = ModelSpec::new(6, &[(8, 0.0), (5, 0.0)], 0.3, 4);
        let p = build_model(&spec, 1).unwrap();
        let (x, _) = random_batch(17, 6, 4, 2);
        for mode in [Mode::Train, Mode::Eval] {
            let c = forward(&p, x.view(), mode, 5).unwrap();
            for row in c.probs.outer_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = build_model(&ModelSpec::new(3, &[(4, 0.0)], 0.0, 2), 1).unwrap();
        let x = Array2::zeros((2, 5));
        assert!(matches!(forward(&p, x.view(), Mode::Eval, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn hand_evaluated_linear_softmax() {
        // no hidden layers: logits = x W + b
        let spec = ModelSpec::new(2, &[], 0.0, 2);
        let mut p = build_model(&spec, 0).unwrap();
        p.output.weight = array![[1.0, -1.0], [0.5, 2.0]];
        p.output.bias = array![0.1, -0.2];
        let x = array![[2.0, 1.0]];
        let c = forward(&p, x.view(), Mode::Eval, 0).unwrap();
        // logits: [2 + 0.5 + 0.1, -2 + 2 - 0.2] = [2.6, -0.2]
        let e0 = 2.6f64.exp();
        let e1 = (-0.2f64).exp();
        assert!((c.probs[[0, 0]] - e0 / (e0 + e1)).abs() < 1e-15);
        assert!((c.probs[[0, 1]] - e1 / (e0 + e1)).abs() < 1e-15);
    }

    #[test]
    fn zero_dropout_train_and_eval_differ_only_by_bn_stats() {
        let spec = ModelSpec::new(4, &[(6, 0.0)], 0.0, 3);
        let mut p = build_model(&spec, 2).unwrap();
        let (x, _) = random_batch(12, 4, 3, 3);
        let train = forward(&p, x.view(), Mode::Train, 1).unwrap();
        // make the running stats equal to this batch's statistics
        p.hidden[0].bn.running_mean = train.blocks[0].batch_mean.clone();
        p.hidden[0].bn.running_var = train.blocks[0].batch_var.clone();
        let eval = forward(&p, x.view(), Mode::Eval, 99).unwrap();
        for (a, b) in train.probs.iter().zip(eval.probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_is_pure() {
        let spec = ModelSpec::new(4, &[(6, 0.0)], 0.5, 3);
        let p = build_model(&spec, 2).unwrap();
        let (x, _) = random_batch(5, 4, 3, 3);
        let a = forward(&p, x.view(), Mode::Eval, 1).unwrap();
        let b = forward(&p, x.view(), Mode::Eval, 2).unwrap();
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn proximal_off_and_zero_deviation() {
        let spec = ModelSpec::new(3, &[(4, 0.01)], 0.0, 2);
        let p = build_model(&spec, 7).unwrap();
        let (x, y) = random_batch(9, 3, 2, 8);
        let (plain, _, _) = loss_and_grads(&p, x.view(), &y, Mode::Train, 0, 0.0, None).unwrap();
        let (same, _, _) = loss_and_grads(&p, x.view(), &y, Mode::Train, 0, 10.0, Some(&p)).unwrap();
        assert_eq!(plain, same);
        let ce = forward(&p, x.view(), Mode::Train, 0).unwrap().cross_entropy(&y);
        let l2: f64 = 0.01 * p.hidden[0].dense.weight.iter().map(|w| w * w).sum::<f64>();
        assert!((plain - (ce + l2)).abs() < 1e-15);
    }

    #[test]
    fn proximal_without_anchor_is_an_error() {
        let p = build_model(&ModelSpec::new(3, &[(4, 0.0)], 0.0, 2), 7).unwrap();
        let (x, y) = random_batch(4, 3, 2, 8);
        assert!(loss_and_grads(&p, x.view(), &y, Mode::Train, 0, 0.5, None).is_err());
    }

    #[test]
    fn running_stats_ema() {
        let spec = ModelSpec::new(3, &[(4, 0.0)], 0.0, 2);
        let mut p = build_model(&spec, 7).unwrap();
        let (x, _) = random_batch(10, 3, 2, 8);
        let c = forward(&p, x.view(), Mode::Train, 0).unwrap();
        p.update_running_stats(&c);
        for j in 0..4 {
            let want_mean = 0.01 * c.blocks[0].batch_mean[j];
            let want_var = 0.99 + 0.01 * c.blocks[0].batch_var[j];
            assert!((p.hidden[0].bn.running_mean[j] - want_mean).abs() < 1e-15);
            assert!((p.hidden[0].bn.running_var[j] - want_var).abs() < 1e-15);
            assert!(p.hidden[0].bn.running_var[j] >= 0.0);
        }
    }
}
