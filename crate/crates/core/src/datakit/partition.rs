use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seeding;

/// Degree of label skew across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Iid,
    LightNonIid,
    ModerateNonIid,
    SevereNonIid,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Iid => "iid",
            Scenario::LightNonIid => "light_non_iid",
            Scenario::ModerateNonIid => "moderate_non_iid",
            Scenario::SevereNonIid => "severe_non_iid",
        }
    }

    /// Share of class `class` that goes to `client`.
    ///
    /// - IID: even split.
    /// - Light: every client sees every class; the client whose index matches
    ///   the class (mod C) holds three times the share of the others.
    /// - Moderate: like light, but client k never sees class (k + 1) mod C.
    /// - Severe: client k holds only class k mod C.
    fn share(self, class: usize, client: usize, n_classes: usize, n_clients: usize) -> f64 {
        let weight = |k: usize| -> f64 {
            let home = k % n_classes == class;
            match self {
                Scenario::Iid => 1.0,
                Scenario::LightNonIid => {
                    if home {
                        3.0
                    } else {
                        1.0
                    }
                }
                Scenario::ModerateNonIid => {
                    if home {
                        3.0
                    } else if n_classes > 1 && (k + 1) % n_classes == class {
                        0.0
                    } else {
                        1.0
                    }
                }
                Scenario::SevereNonIid => {
                    if home {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        };
        let total: f64 = (0..n_clients).map(weight).sum();
        if total == 0.0 {
            0.0
        } else {
            weight(client) / total
        }
    }
}

/// Per-client `(class, count)` quotas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    pub scenario: Scenario,
    pub assignments: Vec<Vec<(usize, usize)>>,
}

impl PartitionPlan {
    /// Build quotas for `scenario` over the given per-class sample counts.
    /// Each quota is `floor(share * n_c)`, so totals never exceed availability.
    pub fn for_scenario(scenario: Scenario, class_counts: &[usize], n_clients: usize) -> Result<Self> {
        if n_clients == 0 {
            return Err(Error::invalid("a partition plan needs at least one client"));
        }
        let n_classes = class_counts.len();
        let assignments = (0..n_clients)
            .map(|k| {
                class_counts
                    .iter()
                    .enumerate()
                    .filter_map(|(c, &n)| {
                        let q = (scenario.share(c, k, n_classes, n_clients) * n as f64 + 1e-9).floor() as usize;
                        (q > 0).then_some((c, q))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            scenario,
            assignments,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    /// Total quota per class id (length `n_classes`).
    pub fn totals(&self, n_classes: usize) -> Vec<usize> {
        let mut t = vec![0; n_classes];
        for client in &self.assignments {
            for &(c, q) in client {
                if c < n_classes {
                    t[c] += q;
                }
            }
        }
        t
    }
}

/// Split `ds` across clients according to `plan`.
///
/// Each class's rows are shuffled once with a class-specific seed and handed
/// out in consecutive blocks in client order, so samples never repeat across
/// clients. Every client dataset keeps the pooled row order.
pub fn partition(ds: &Dataset, plan: &PartitionPlan, seed: u64) -> Result<Vec<Dataset>> {
    let n_classes = ds.n_classes();
    let counts = ds.class_counts();
    for client in &plan.assignments {
        if let Some(&(c, _)) = client.iter().find(|(c, _)| *c >= n_classes) {
            return Err(Error::invalid(format!(
                "plan references class {c}, dataset has {n_classes} classes"
            )));
        }
    }
    for (class, (&want, &have)) in plan.totals(n_classes).iter().zip(&counts).enumerate() {
        if want > have {
            return Err(Error::UnsatisfiableQuota {
                class,
                requested: want,
                available: have,
                shortfall: want - have,
            });
        }
    }

    let pools: Vec<Vec<usize>> = (0..n_classes)
        .map(|c| {
            let mut idx = ds.indices_of(c);
            idx.shuffle(&mut seeding::rng_for(seed, &[c as u64]));
            idx
        })
        .collect();
    let mut cursor = vec![0usize; n_classes];

    let mut out = Vec::with_capacity(plan.n_clients());
    for client in &plan.assignments {
        let mut rows = Vec::new();
        for &(c, q) in client {
            rows.extend_from_slice(&pools[c][cursor[c]..cursor[c] + q]);
            cursor[c] += q;
        }
        rows.sort_unstable();
        out.push(ds.select(&rows));
    }
    Ok(out)
}
