use ndarray::{Array1, Axis};

use super::Dataset;
use crate::error::{Error, Result};

/// Per-column min-max statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Array1<f64>,
    pub max: Array1<f64>,
}

impl MinMaxScaler {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset("min-max scaling needs at least one row"));
        }
        let min = ds
            .features
            .fold_axis(Axis(0), f64::INFINITY, |&acc, &x| acc.min(x));
        let max = ds
            .features
            .fold_axis(Axis(0), f64::NEG_INFINITY, |&acc, &x| acc.max(x));
        Ok(Self { min, max })
    }

    /// Map each column to `(x - min) / (max - min)`; constant columns map to 0.
    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dims() != self.min.len() {
            return Err(Error::shape(format!(
                "scaler fitted on {} columns, dataset has {}",
                self.min.len(),
                ds.dims()
            )));
        }
        let mut out = ds.clone();
        for (j, mut col) in out.features.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.min[j], self.max[j]);
            let range = hi - lo;
            if range > 0.0 {
                col.mapv_inplace(|x| (x - lo) / range);
            } else {
                col.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Min-max scale `ds` with statistics computed over `ds` itself.
pub fn min_max_scale(ds: &Dataset) -> Result<Dataset> {
    MinMaxScaler::fit(ds)?.transform(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn ds(features: Array2<f64>) -> Dataset {
        let n = features.nrows();
        Dataset::new(features, vec![0; n], vec!["a".into()]).unwrap()
    }

    #[test]
    fn affine_column() {
        let out = min_max_scale(&ds(array![[0.0], [1.0], [2.0]])).unwrap();
        assert_eq!(out.features, array![[0.0], [0.5], [1.0]]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let out = min_max_scale(&ds(array![[7.0], [7.0], [7.0]])).unwrap();
        assert_eq!(out.features, array![[0.0], [0.0], [0.0]]);
    }

    #[test]
    fn empty_is_an_error() {
        let empty = Dataset::empty(3, vec!["a".into()]);
        assert!(matches!(min_max_scale(&empty), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn matches_explicit_loop_oracle() {
        let x = array![
            [0.3, -2.0, 5.0],
            [1.7, 4.0, 5.0],
            [-0.2, 0.5, 5.0],
            [0.9, 3.3, 5.0],
            [2.5, -1.1, 5.0]
        ];
        let out = min_max_scale(&ds(x.clone())).unwrap();
        for j in 0..3 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..5 {
                lo = lo.min(x[[i, j]]);
                hi = hi.max(x[[i, j]]);
            }
            for i in 0..5 {
                let want = if hi > lo { (x[[i, j]] - lo) / (hi - lo) } else { 0.0 };
                assert_eq!(out.features[[i, j]], want);
            }
        }
    }

    proptest! {
        #[test]
        fn idempotent_and_in_unit_range(
            rows in 1usize..8,
            cols in 1usize..5,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::seeding::rng(seed);
            let x = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-100.0..100.0));
            let once = min_max_scale(&ds(x)).unwrap();
            let twice = min_max_scale(&once).unwrap();
            prop_assert_eq!(&once.features, &twice.features);
            prop_assert!(once.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
