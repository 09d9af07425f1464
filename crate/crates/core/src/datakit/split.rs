use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::seeding;

/// Stratified train/test split.
///
/// Per class with `n_c > 0` samples, `max(1, floor(train_fraction * n_c))`
/// seeded-shuffled samples go to train and the rest to test. Both halves keep
/// the input row order.
pub fn stratified_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..ds.n_classes() {
        let mut idx = ds.indices_of(class);
        let n = idx.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            return Err(Error::invalid(format!(
                "class {class} has {n} sample(s); a stratified split needs at least 2"
            )));
        }
        // The epsilon keeps products like 0.29 * 100 from flooring one short.
        let n_train = ((train_fraction * n as f64 + 1e-9).floor() as usize).max(1);
        idx.shuffle(&mut seeding::rng_for(seed, &[class as u64]));
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.select(&train), ds.select(&test)))
}
