use ndarray::{Array2, ArrayView2};
use rand::seq::index;

use super::seed::{kmeans_plus_plus, sq_dist};
use crate::error::{Error, Result};
use crate::seeding;

/// Mini-batch k-means with per-center learning rates.
///
/// Centers come from k-means++. Each iteration draws `batch` distinct points,
/// assigns them to their nearest center under the pre-iteration centers, then
/// for every assigned point increments that center's count `v` and moves it
/// by `1 / v` toward the point.
pub fn minibatch_kmeans(points: ArrayView2<f64>, k: usize, batch: usize, iters: usize, seed: u64) -> Result<Array2<f64>> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("cannot place {k} centers on {n} points")));
    }
    let batch = batch.clamp(1, n);
    let mut rng = seeding::rng(seed);
    let mut centers = kmeans_plus_plus(points, k, &mut rng);
    let mut counts = vec![0u64; k];
    for _ in 0..iters {
        let picked = index::sample(&mut rng, n, batch).into_vec();
        let assigned: Vec<usize> = picked
            .iter()
            .map(|&i| nearest(&centers, &points.row(i).to_vec()))
            .collect();
        for (&i, &c) in picked.iter().zip(&assigned) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            let mut center = centers.row_mut(c);
            for (cv, &xv) in center.iter_mut().zip(points.row(i)) {
                *cv += eta * (xv - *cv);
            }
        }
    }
    Ok(centers)
}

fn nearest(centers: &Array2<f64>, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.outer_iter().enumerate() {
        let d = sq_dist(c.as_slice().expect("contiguous"), x);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn identical_points_fixed_point() {
        let pts = array![[0.3, 0.7], [0.3, 0.7], [0.3, 0.7], [0.3, 0.7]];
        let c = minibatch_kmeans(pts.view(), 3, 2, 10, 0).unwrap();
        for row in c.outer_iter() {
            assert_eq!(row.to_vec(), vec![0.3, 0.7]);
        }
    }

    #[test]
    fn two_points_two_centers() {
        let pts = array![[0.0, 1.0], [2.0, 3.0]];
        let c = minibatch_kmeans(pts.view(), 2, 2, 20, 5).unwrap();
        let mut rows: Vec<Vec<f64>> = c.outer_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(rows, vec![vec![0.0, 1.0], vec![2.0, 3.0]]);
    }

    #[test]
    fn too_many_centers() {
        let pts = array![[0.0], [1.0]];
        assert!(minibatch_kmeans(pts.view(), 3, 2, 1, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let mut rng = seeding::rng(1);
        let pts = Array2::from_shape_fn((50, 3), |_| rng.random::<f64>());
        let a = minibatch_kmeans(pts.view(), 4, 8, 30, 2).unwrap();
        let b = minibatch_kmeans(pts.view(), 4, 8, 30, 2).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn centroids_stay_in_bounding_box(seed in any::<u64>(), n in 1usize..30, k in 1usize..5) {
            let k = k.min(n);
            let mut rng = seeding::rng(seed);
            let pts = Array2::from_shape_fn((n, 3), |_| rng.random_range(-5.0..5.0));
            let c = minibatch_kmeans(pts.view(), k, 7, 15, seed).unwrap();
            for t in 0..3 {
                let lo = pts.column(t).fold(f64::INFINITY, |a, &b| a.min(b));
                let hi = pts.column(t).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                for v in c.column(t) {
                    prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
        }
    }
}
