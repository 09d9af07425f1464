use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::GmmModel;
use crate::error::{Error, Result};
use crate::seeding::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prototype {
    pub class: usize,
    pub vector: Vec<f64>,
}

/// The upload payload of one client: `{client, sigma, entries: [{class, vector}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeSet {
    #[serde(rename = "client")]
    pub origin_client: usize,
    #[serde(rename = "sigma")]
    pub noise_sigma: f64,
    pub entries: Vec<Prototype>,
}

impl PrototypeSet {
    pub fn new(origin_client: usize) -> Self {
        Self {
            origin_client,
            noise_sigma: 0.0,
            entries: Vec::new(),
        }
    }

    pub fn extend(&mut self, other: PrototypeSet) {
        self.entries.extend(other.entries);
    }

    /// Count of vector coordinates, i.e. the payload size in floats.
    pub fn vector_floats(&self) -> usize {
        self.entries.iter().map(|e| e.vector.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ps: Self = serde_json::from_str(s)?;
        if ps.entries.iter().any(|e| e.vector.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("prototype vectors must be finite"));
        }
        Ok(ps)
    }

    /// `(class, count)` per class in ascending class order.
    pub fn class_counts(&self) -> Vec<(usize, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.class).or_insert(0) += 1;
        }
        counts.into_iter().collect()
    }
}

/// One prototype per mixture component, equal to the component means.
pub fn extract_prototypes(model: &GmmModel, class_id: usize, origin_client: usize) -> PrototypeSet {
    PrototypeSet {
        origin_client,
        noise_sigma: 0.0,
        entries: model
            .means
            .outer_iter()
            .map(|mu| Prototype {
                class: class_id,
                vector: mu.to_vec(),
            })
            .collect(),
    }
}

/// Add i.i.d. `N(0, sigma^2)` noise to every coordinate.
///
/// Each entry's noise stream is keyed by `seed`, its class and the bits of
/// its vector, so reordering entries reorders the output the same way.
pub fn perturb(ps: &PrototypeSet, sigma: f64, seed: u64) -> Result<PrototypeSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = ps.clone();
    out.noise_sigma = sigma;
    if sigma == 0.0 {
        return Ok(out);
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    for e in &mut out.entries {
        let mut key: Vec<u64> = Vec::with_capacity(e.vector.len() + 2);
        key.push(tag::NOISE);
        key.push(e.class as u64);
        key.extend(e.vector.iter().map(|v| v.to_bits()));
        let mut rng = seeding::rng_for(seed, &key);
        for v in &mut e.vector {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmmproto::{em_fit, EmConfig};
    use ndarray::array;

    fn sample_set() -> PrototypeSet {
        PrototypeSet {
            origin_client: 1,
            noise_sigma: 0.0,
            entries: (0..6)
                .map(|i| Prototype {
                    class: i % 3,
                    vector: vec![i as f64 * 0.1, 1.0 - i as f64 * 0.05, 0.5],
                })
                .collect(),
        }
    }

    #[test]
    fn extraction_is_identity_on_means() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0], [9.0, 0.0], [9.1, 0.1]];
        let m = em_fit(x.view(), 3, 0, &EmConfig::default()).unwrap();
        let ps = extract_prototypes(&m, 2, 0);
        assert_eq!(ps.entries.len(), 3);
        for (e, mu) in ps.entries.iter().zip(m.means.outer_iter()) {
            assert_eq!(e.class, 2);
            assert_eq!(e.vector, mu.to_vec());
        }
    }

    #[test]
    fn single_component_is_sample_mean() {
        let x = array![[1.0, 4.0], [3.0, 0.0]];
        let m = em_fit(x.view(), 1, 0, &EmConfig::default()).unwrap();
        let ps = extract_prototypes(&m, 0, 0);
        assert_eq!(ps.entries.len(), 1);
        assert_eq!(ps.entries[0].vector, vec![2.0, 2.0]);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let ps = sample_set();
        assert_eq!(perturb(&ps, 0.0, 5).unwrap(), ps);
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(perturb(&sample_set(), -0.1, 0).is_err());
    }

    #[test]
    fn perturb_records_sigma_and_is_reproducible() {
        let ps = sample_set();
        let a = perturb(&ps, 0.01, 3).unwrap();
        assert_eq!(a.noise_sigma, 0.01);
        assert_eq!(a, perturb(&ps, 0.01, 3).unwrap());
        assert_ne!(a, perturb(&ps, 0.01, 4).unwrap());
    }

    #[test]
    fn commutes_with_permutation() {
        let ps = sample_set();
        let mut reversed = ps.clone();
        reversed.entries.reverse();
        let mut a = perturb(&ps, 0.05, 8).unwrap();
        a.entries.reverse();
        assert_eq!(a, perturb(&reversed, 0.05, 8).unwrap());
    }

    #[test]
    fn json_wire_shape() {
        let ps = sample_set();
        let v: serde_json::Value = serde_json::from_str(&ps.to_json().unwrap()).unwrap();
        assert_eq!(v["client"], 1);
        assert_eq!(v["entries"][0]["class"], 0);
        assert_eq!(v["entries"][0]["vector"].as_array().unwrap().len(), 3);
        assert_eq!(PrototypeSet::from_json(&ps.to_json().unwrap()).unwrap(), ps);
        assert_eq!(ps.vector_floats(), 18);
    }
}
