use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::seeding::Rng as SeedRng;

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: the first center is drawn uniformly, every further
/// center with probability proportional to its squared distance to the
/// nearest chosen center. When every remaining distance is zero the draw
/// falls back to uniform.
pub fn kmeans_plus_plus(points: ArrayView2<f64>, k: usize, rng: &mut SeedRng) -> Array2<f64> {
    let n = points.nrows();
    let d = points.ncols();
    assert!(k >= 1 && k <= n, "k-means++ needs 1 <= k <= n");
    let row = |i: usize| points.row(i).to_vec();
    let mut centers = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(&row(i), &row(first))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        let chosen = row(pick);
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(sq_dist(&row(i), &chosen));
        }
    }
    centers
}
