use crate::error::{Error, Result};
use crate::neuralnet::ModelParams;

fn weights(updates: &[(ModelParams, usize)]) -> Result<Vec<f64>> {
    let Some((first, _)) = updates.first() else {
        return Err(Error::invalid("aggregation needs at least one update"));
    };
    if let Some(k) = updates.iter().position(|(p, _)| !p.same_shape(first)) {
        return Err(Error::shape(format!("update {k} does not match the shape of update 0")));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("all aggregation weights are zero"));
    }
    Ok(updates.iter().map(|(_, n)| *n as f64 / total as f64).collect())
}

/// Sample-weighted mean of every tensor, batch-norm running statistics
/// included. Each element accumulates `(n_k / N) * value` in update order
/// starting from zero.
pub fn fedavg_aggregate(updates: &[(ModelParams, usize)]) -> Result<ModelParams> {
    let w = weights(updates)?;
    let mut out = updates[0].0.zeros_like();
    let sources: Vec<Vec<&[f64]>> = updates.iter().map(|(p, _)| p.tensors()).collect();
    for (t, dst) in out.tensors_mut().into_iter().enumerate() {
        for (src, &wk) in sources.iter().zip(&w) {
            for (d, s) in dst.iter_mut().zip(src[t]) {
                *d += wk * s;
            }
        }
    }
    Ok(out)
}

/// Like [`fedavg_aggregate`] for trainable tensors only. Batch-norm running
/// statistics are copied from the update with the largest weight (first on
/// ties).
pub fn fedavg_aggregate_trainable(updates: &[(ModelParams, usize)]) -> Result<ModelParams> {
    let w = weights(updates)?;
    let heaviest = (0..w.len()).fold(0, |best, k| if w[k] > w[best] { k } else { best });
    let mut out = updates[heaviest].0.clone();
    let n_trainable = out.n_trainable_tensors();
    let sources: Vec<Vec<&[f64]>> = updates.iter().map(|(p, _)| p.tensors()).collect();
    for (t, dst) in out.tensors_mut().into_iter().enumerate().take(n_trainable) {
        dst.fill(0.0);
        for (src, &wk) in sources.iter().zip(&w) {
            for (d, s) in dst.iter_mut().zip(src[t]) {
                *d += wk * s;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{build_model, ModelSpec};

    fn scalar_model(v: f64) -> ModelParams {
        let mut p = ModelParams::zeros(&ModelSpec::new(1, &[], 0.0, 1));
        for t in p.tensors_mut() {
            t.fill(v);
        }
        p
    }

    fn first(p: &ModelParams) -> f64 {
        p.tensors()[0][0]
    }

    #[test]
    fn single_update_is_identity() {
        let p = build_model(&ModelSpec::new(4, &[(3, 0.0)], 0.0, 2), 5).unwrap();
        assert_eq!(fedavg_aggregate(&[(p.clone(), 7)]).unwrap(), p);
    }

    #[test]
    fn midpoint_and_weighted_mean() {
        let a = scalar_model(0.0);
        let b = scalar_model(4.0);
        assert_eq!(first(&fedavg_aggregate(&[(a.clone(), 5), (b.clone(), 5)]).unwrap()), 2.0);
        assert_eq!(first(&fedavg_aggregate(&[(a, 1), (b, 3)]).unwrap()), 3.0);
    }

    #[test]
    fn errors() {
        assert!(fedavg_aggregate(&[]).is_err());
        assert!(fedavg_aggregate(&[(scalar_model(1.0), 0), (scalar_model(2.0), 0)]).is_err());
        let other = ModelParams::zeros(&ModelSpec::new(2, &[], 0.0, 1));
        assert!(matches!(
            fedavg_aggregate(&[(scalar_model(1.0), 1), (other, 1)]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn trainable_only_keeps_heaviest_running_stats() {
        let spec = ModelSpec::new(3, &[(2, 0.0)], 0.0, 2);
        let mut a = build_model(&spec, 1).unwrap();
        let mut b = build_model(&spec, 2).unwrap();
        a.hidden[0].bn.running_mean.fill(1.0);
        b.hidden[0].bn.running_mean.fill(9.0);
        let full = fedavg_aggregate(&[(a.clone(), 1), (b.clone(), 3)]).unwrap();
        let partial = fedavg_aggregate_trainable(&[(a, 1), (b, 3)]).unwrap();
        assert_eq!(partial.hidden[0].bn.running_mean[0], 9.0);
        assert_eq!(full.hidden[0].bn.running_mean[0], 7.0);
        assert_eq!(partial.trainable(), full.trainable());
    }
}
