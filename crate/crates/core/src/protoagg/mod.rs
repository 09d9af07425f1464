//! Server-side prototype consolidation.
//!
//! Perturbed prototypes from every client are grouped by class, sorted into
//! a canonical order, and clustered with mini-batch k-means. The resulting
//! centroids are the global prototypes broadcast back to clients.

mod kmeans;
mod seed;

pub use kmeans::minibatch_kmeans;
pub use seed::kmeans_plus_plus;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmmproto::PrototypeSet;
use crate::seeding::{self, tag};

/// How many global prototypes to keep per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LcRule {
    /// `min(max(ceil(n * numerator / denominator), 1), n, cap)`.
    Ratio { numerator: usize, denominator: usize, cap: usize },
    /// A fixed count, still capped by the number received.
    Fixed(usize),
}

impl Default for LcRule {
    /// 9 received prototypes give 4 global ones.
    fn default() -> Self {
        LcRule::Ratio {
            numerator: 4,
            denominator: 9,
            cap: 4,
        }
    }
}

/// Number of global prototypes for a class that received `n_protos`.
/// `_d_x` is accepted for interface symmetry; the default rule ignores it.
pub fn choose_lc(n_protos: usize, _d_x: usize, rule: LcRule) -> usize {
    if n_protos == 0 {
        return 0;
    }
    let l = match rule {
        LcRule::Ratio {
            numerator,
            denominator,
            cap,
        } => (n_protos * numerator).div_ceil(denominator.max(1)).max(1).min(cap.max(1)),
        LcRule::Fixed(l) => l.max(1),
    };
    l.min(n_protos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    pub lc_rule: LcRule,
    /// Mini-batch size; `None` means `min(32, points)`.
    pub batch_size: Option<usize>,
    pub iters: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            lc_rule: LcRule::default(),
            batch_size: None,
            iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    pub centroids: Vec<Vec<f64>>,
    /// Distinct clients that submitted prototypes for this class.
    pub contributors: usize,
    pub received: usize,
}

/// Per-class global prototypes. Serializes as `{"<class>": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalPrototypes {
    pub classes: BTreeMap<usize, ClassPrototypes>,
    /// Largest noise level among the submissions.
    pub noise_sigma: f64,
}

impl GlobalPrototypes {
    pub fn covers(&self, class: usize) -> bool {
        self.classes.get(&class).is_some_and(|c| !c.centroids.is_empty())
    }

    pub fn centroids(&self, class: usize) -> &[Vec<f64>] {
        self.classes.get(&class).map(|c| c.centroids.as_slice()).unwrap_or(&[])
    }

    pub fn vector_floats(&self) -> usize {
        self.classes
            .values()
            .flat_map(|c| c.centroids.iter())
            .map(|v| v.len())
            .sum()
    }

    /// `(class, L_c)` in class order.
    pub fn class_counts(&self) -> Vec<(usize, usize)> {
        self.classes.iter().map(|(&c, p)| (c, p.centroids.len())).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let wire: BTreeMap<String, &Vec<Vec<f64>>> =
            self.classes.iter().map(|(c, p)| (c.to_string(), &p.centroids)).collect();
        Ok(serde_json::to_string(&wire)?)
    }

    /// Parse the wire form. Provenance is not on the wire, so `contributors`
    /// and `received` come back as 0 and `noise_sigma` as `sigma`.
    pub fn from_json(s: &str, sigma: f64) -> Result<Self> {
        let wire: BTreeMap<String, Vec<Vec<f64>>> = serde_json::from_str(s)?;
        let mut classes = BTreeMap::new();
        for (k, centroids) in wire {
            let class: usize = k
                .parse()
                .map_err(|_| Error::Serde(format!("class key {k:?} is not an integer")))?;
            classes.insert(
                class,
                ClassPrototypes {
                    centroids,
                    contributors: 0,
                    received: 0,
                },
            );
        }
        Ok(Self {
            classes,
            noise_sigma: sigma,
        })
    }
}

/// Cluster every class's submitted prototypes into `choose_lc` centroids.
///
/// Points are sorted lexicographically before clustering and the seed is
/// derived per class, so the result does not depend on client order.
pub fn aggregate(all: &[PrototypeSet], cfg: &AggregationConfig, seed: u64) -> Result<GlobalPrototypes> {
    let mut by_class: BTreeMap<usize, (Vec<Vec<f64>>, BTreeSet<usize>)> = BTreeMap::new();
    let mut dims = None;
    for set in all {
        for e in &set.entries {
            match dims {
                None => dims = Some(e.vector.len()),
                Some(d) if d != e.vector.len() => {
                    return Err(Error::shape(format!(
                        "prototype of length {} among length-{d} prototypes",
                        e.vector.len()
                    )))
                }
                _ => {}
            }
            if e.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("prototype vectors must be finite"));
            }
            let slot = by_class.entry(e.class).or_default();
            slot.0.push(e.vector.clone());
            slot.1.insert(set.origin_client);
        }
    }
    let Some(d) = dims else {
        return Err(Error::EmptyDataset("no prototypes to aggregate"));
    };
    let noise_sigma = all.iter().map(|s| s.noise_sigma).fold(0.0, f64::max);

    let mut classes = BTreeMap::new();
    for (class, (mut points, clients)) in by_class {
        points.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let n = points.len();
        let matrix = Array2::from_shape_fn((n, d), |(i, j)| points[i][j]);
        let k = choose_lc(n, d, cfg.lc_rule);
        let batch = cfg.batch_size.unwrap_or(32).clamp(1, n);
        let centers = minibatch_kmeans(
            matrix.view(),
            k,
            batch,
            cfg.iters,
            seeding::derive(seed, &[tag::AGG, class as u64]),
        )?;
        classes.insert(
            class,
            ClassPrototypes {
                centroids: centers.outer_iter().map(|r| r.to_vec()).collect(),
                contributors: clients.len(),
                received: n,
            },
        );
    }
    Ok(GlobalPrototypes { classes, noise_sigma })
}
