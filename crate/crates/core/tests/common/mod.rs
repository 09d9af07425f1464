#![allow(dead_code)]

use fedp3e::neuralnet::{build_model, loss_and_grads, Mode, ModelParams, ModelSpec};
use fedp3e::seeding;
use ndarray::Array2;
use rand::Rng;

/// Relative error with a floor on the denominator, so coordinates whose true
/// partial is ~0 are judged on absolute error at the finite-difference
/// truncation scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Central finite differences of the full objective w.r.t. every trainable
/// scalar. Only the loss value is used, never the analytic gradient.
#[allow(clippy::too_many_arguments)]
pub fn numeric_grads(
    params: &ModelParams,
    x: &Array2<f64>,
    y: &[usize],
    mode: Mode,
    seed: u64,
    mu: f64,
    anchor: Option<&ModelParams>,
    step: f64,
) -> Vec<Vec<f64>> {
    let loss = |p: &ModelParams| loss_and_grads(p, x.view(), y, mode, seed, mu, anchor).unwrap().0;
    let shapes: Vec<usize> = params.trainable().iter().map(|t| t.len()).collect();
    let mut out = Vec::new();
    for (ti, &len) in shapes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.trainable_mut()[ti][i] += step;
            let mut minus = params.clone();
            minus.trainable_mut()[ti][i] -= step;
            *gi = (loss(&plus) - loss(&minus)) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

pub struct Case {
    pub spec: ModelSpec,
    pub mode: Mode,
    pub mu: f64,
}

pub fn perturbed(p: &ModelParams, seed: u64, scale: f64) -> ModelParams {
    let mut q = p.clone();
    let mut rng = seeding::rng(seed);
    for t in q.trainable_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
    q
}

/// Largest relative error between analytic and numeric gradients over all
/// trainable scalars of one random instance.
pub fn worst_error(case: &Case, seed: u64) -> f64 {
    let mut rng = seeding::rng(seed);
    let n = 6;
    let x = Array2::from_shape_fn((n, case.spec.input_dim), |_| rng.random_range(-1.0..1.0));
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..case.spec.output_classes)).collect();
    let mut params = build_model(&case.spec, seed).unwrap();
    // move away from gamma = 1 / beta = 0 and give running stats non-trivial values
    params = perturbed(&params, seed ^ 1, 0.3);
    for b in &mut params.hidden {
        b.bn.running_mean.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        b.bn.running_var.mapv_inplace(|_| rng.random_range(0.2..2.0));
    }
    let anchor = perturbed(&params, seed ^ 2, 0.5);
    let anchor = (case.mu > 0.0).then_some(&anchor);
    let (_, analytic, _) = loss_and_grads(&params, x.view(), &y, case.mode, seed, case.mu, anchor).unwrap();
    let numeric = numeric_grads(&params, &x, &y, case.mode, seed, case.mu, anchor, 1e-4);
    analytic
        .trainable()
        .iter()
        .zip(&numeric)
        .flat_map(|(a, n)| a.iter().zip(n).map(|(&a, &n)| rel_err(a, n)))
        .fold(0.0, f64::max)
}

/// Dense, batch norm (train and eval), softmax cross-entropy, L2, proximal
/// and dropout combinations.
pub fn gradcheck_cases() -> Vec<Case> {
    vec![
        Case { spec: ModelSpec::new(2, &[(3, 0.0)], 0.0, 2), mode: Mode::Eval, mu: 0.0 },
        Case { spec: ModelSpec::new(2, &[(3, 0.0)], 0.0, 2), mode: Mode::Train, mu: 0.0 },
        Case { spec: ModelSpec::new(3, &[(4, 0.05)], 0.0, 3), mode: Mode::Train, mu: 0.0 },
        Case { spec: ModelSpec::new(3, &[(4, 0.05), (3, 0.02)], 0.0, 3), mode: Mode::Train, mu: 0.7 },
        Case { spec: ModelSpec::new(4, &[(5, 0.01), (3, 0.0)], 0.3, 2), mode: Mode::Train, mu: 0.2 },
        Case { spec: ModelSpec::new(3, &[], 0.0, 3), mode: Mode::Eval, mu: 1.5 },
    ]
}
