//! Synthetic samples from global prototypes.
//!
//! A client tops up under-represented classes with points on segments
//! between two global prototypes of the same class,
//! `a + lambda * (b - a)` with `lambda ~ U(0, 1)`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datakit::Dataset;
use crate::error::{Error, Result};
use crate::protoagg::GlobalPrototypes;
use crate::seeding;

/// Which classes receive synthetic samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eligibility {
    /// Classes with global prototypes but no local samples.
    MissingOnly,
    /// Classes whose local count is below the mean local count over the
    /// classes known to this client (local or global). Missing classes
    /// always qualify.
    #[default]
    BelowMeanCount,
    All,
}

/// What the augmentation budget is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetBase {
    /// The local training-set size.
    #[default]
    TrainingSize,
    /// The number of global prototype vectors received.
    PrototypeCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub target_fraction: f64,
    pub eligible: Eligibility,
    pub budget_base: BudgetBase,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            target_fraction: 0.10,
            eligible: Eligibility::default(),
            budget_base: BudgetBase::default(),
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::config("augmentation target_fraction must be in (0,1]"));
        }
        Ok(())
    }
}

/// `a + lambda * (b - a)`, coordinate-wise.
pub fn smote_pair(a: &[f64], b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cannot interpolate between lengths {} and {}", a.len(), b.len())));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must be in [0,1], got {lambda}")));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x + lambda * (y - x)).collect())
}

/// Planned synthetic sample count per eligible class, ascending by class.
///
/// The budget `round(target_fraction * base)` is split evenly; the remainder
/// goes to the class with the fewest local samples (lowest id on ties).
pub fn plan_budget(local: &Dataset, gp: &GlobalPrototypes, policy: &AugmentationPolicy) -> Result<Vec<(usize, usize)>> {
    policy.validate()?;
    let counts = local.class_counts();
    let known: Vec<usize> = (0..local.n_classes())
        .filter(|&c| counts[c] > 0 || gp.covers(c))
        .collect();
    let mean = known.iter().map(|&c| counts[c] as f64).sum::<f64>() / known.len().max(1) as f64;
    let eligible: Vec<usize> = known
        .iter()
        .copied()
        .filter(|&c| match policy.eligible {
            Eligibility::MissingOnly => counts[c] == 0,
            Eligibility::BelowMeanCount => (counts[c] as f64) < mean,
            Eligibility::All => true,
        })
        .collect();
    if let Some(&c) = eligible.iter().find(|&&c| !gp.covers(c)) {
        return Err(Error::invalid(format!("class {c} is eligible for augmentation but has no global prototypes")));
    }
    if eligible.is_empty() {
        return Ok(Vec::new());
    }
    let base = match policy.budget_base {
        BudgetBase::TrainingSize => local.len(),
        BudgetBase::PrototypeCount => gp.classes.values().map(|c| c.centroids.len()).sum(),
    };
    let budget = (policy.target_fraction * base as f64).round() as usize;
    let share = budget / eligible.len();
    let rarest = *eligible
        .iter()
        .min_by_key(|&&c| (counts[c], c))
        .expect("non-empty");
    Ok(eligible
        .iter()
        .map(|&c| {
            let extra = if c == rarest { budget % eligible.len() } else { 0 };
            (c, share + extra)
        })
        .collect())
}

/// Append synthetic rows for the classes chosen by `policy`.
///
/// Classes with two or more global prototypes get interpolations between a
/// random ordered pair of distinct prototypes; a class with a single
/// prototype gets that prototype plus `N(0, sigma^2)` jitter, where sigma is
/// the recorded prototype noise level.
pub fn augment(local: &Dataset, gp: &GlobalPrototypes, policy: &AugmentationPolicy) -> Result<Dataset> {
    if local.is_empty() {
        return Err(Error::EmptyDataset("augmentation needs local data"));
    }
    if gp.classes.values().all(|c| c.centroids.is_empty()) {
        return Err(Error::invalid("global prototypes cover no class"));
    }
    if gp.classes.values().flat_map(|c| c.centroids.iter()).any(|v| v.len() != local.dims()) {
        return Err(Error::shape("global prototype length differs from local feature width"));
    }
    let plan = plan_budget(local, gp, policy)?;
    let total: usize = plan.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Ok(local.clone());
    }
    let mut rng = seeding::rng(policy.seed);
    let jitter = Normal::new(0.0, gp.noise_sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rows = Array2::zeros((total, local.dims()));
    let mut labels = Vec::with_capacity(total);
    let mut r = 0;
    for &(class, n) in &plan {
        let protos = gp.centroids(class);
        for _ in 0..n {
            let sample = if protos.len() >= 2 {
                let a = rng.random_range(0..protos.len());
                let mut b = rng.random_range(0..protos.len() - 1);
                if b >= a {
                    b += 1;
                }
                let lambda: f64 = rng.random();
                smote_pair(&protos[a], &protos[b], lambda)?
            } else {
                protos[0].iter().map(|&v| v + jitter.sample(&mut rng)).collect()
            };
            rows.row_mut(r).assign(&ndarray::ArrayView1::from(&sample));
            labels.push(class);
            r += 1;
        }
    }
    let synthetic = Dataset::new(rows, labels, local.class_names.clone())?;
    local.concat(&synthetic)
}
