//! Data ingestion and partitioning for simulated silos.
//!
//! A [`Dataset`] is a dense feature matrix plus integer class labels. The
//! pipeline per run is: load or synthesize, optionally scale globally,
//! partition across clients with a [`PartitionPlan`], then per client scale
//! (by default) and split 80/20 stratified into train and test.

mod csv_io;
mod partition;
mod scale;
mod split;
mod synthetic;

pub use csv_io::{load_csv_dir, ClassRule, CsvSchema};
pub use partition::{partition, PartitionPlan, Scenario};
pub use scale::{min_max_scale, MinMaxScaler};
pub use split::stratified_split;
pub use synthetic::{synthesize, SyntheticSpec};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid(format!(
                "label {bad} outside class space of size {}",
                class_names.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            class_names,
        })
    }

    /// An empty dataset with the given feature width and class space.
    pub fn empty(dims: usize, class_names: Vec<String>) -> Self {
        Self {
            features: Array2::zeros((0, dims)),
            labels: Vec::new(),
            class_names,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Sample count per class id, length `n_classes()`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices of class `class`, in row order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    /// Rows of class `class` as a matrix.
    pub fn class_features(&self, class: usize) -> Array2<f64> {
        self.features.select(Axis(0), &self.indices_of(class))
    }

    /// Sub-dataset made of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Append rows of `other` below `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "cannot concatenate {}-dim and {}-dim datasets",
                self.dims(),
                other.dims()
            )));
        }
        if self.class_names != other.class_names {
            return Err(Error::invalid("cannot concatenate datasets with different class spaces"));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .map_err(|e| Error::shape(e.to_string()))?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            features,
            labels,
            class_names: self.class_names.clone(),
        })
    }
}

/// Where min-max statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Each client scales its own partition (the reference pipeline).
    #[default]
    PerClient,
    /// Scale the pooled dataset once, before partitioning.
    Global,
    /// Leave features untouched.
    None,
}

/// One silo's local train and test data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Partition `ds` with `plan`, scale according to `scaling`, then split each
/// client stratified with `train_fraction`.
pub fn prepare_clients(
    ds: &Dataset,
    plan: &PartitionPlan,
    scaling: Scaling,
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientData>> {
    use crate::seeding::{derive, tag};

    let pooled = match scaling {
        Scaling::Global => min_max_scale(ds)?,
        _ => ds.clone(),
    };
    let parts = partition(&pooled, plan, derive(seed, &[tag::PARTITION]))?;
    parts
        .into_iter()
        .enumerate()
        .map(|(k, part)| {
            let part = match scaling {
                Scaling::PerClient => min_max_scale(&part)?,
                _ => part,
            };
            let (train, test) =
                stratified_split(&part, train_fraction, derive(seed, &[tag::SPLIT, k as u64]))?;
            Ok(ClientData { train, test })
        })
        .collect()
}
