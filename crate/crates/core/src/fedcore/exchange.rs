use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::comm::count_vector_floats;
use super::FederationConfig;
use crate::datakit::Dataset;
use crate::error::{Error, Result};
use crate::gmmproto::{extract_prototypes, perturb, select_k_bic, PrototypeSet};
use crate::protoagg::{aggregate, GlobalPrototypes};
use crate::seeding::{derive, tag};
use crate::smoteaug::{augment, AugmentationPolicy};

/// What moved during the prototype exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    /// `(class, prototypes)` uploaded by each client.
    pub upload_counts: Vec<Vec<(usize, usize)>>,
    /// Floats in each client's serialized upload.
    pub upload_serialized: Vec<usize>,
    /// `(class, L_c)` of the global prototype set.
    pub global_counts: Vec<(usize, usize)>,
    /// Floats in the serialized broadcast, received by every client.
    pub download_serialized: usize,
    /// Synthetic samples each client added.
    pub synthetic_added: Vec<usize>,
}

/// Fit a BIC-selected GMM per class of `train` and perturb the means.
pub fn client_prototypes(
    train: &Dataset,
    client: usize,
    k_max: usize,
    em: &crate::gmmproto::EmConfig,
    sigma: f64,
    seed: u64,
) -> Result<PrototypeSet> {
    let mut set = PrototypeSet::new(client);
    for (class, &n) in train.class_counts().iter().enumerate() {
        if n == 0 {
            continue;
        }
        let x = train.class_features(class);
        let sel = select_k_bic(x.view(), k_max, derive(seed, &[tag::GMM, class as u64]), em)?;
        set.extend(extract_prototypes(&sel.model, class, client));
    }
    perturb(&set, sigma, derive(seed, &[tag::NOISE]))
}

/// Run the whole exchange and return the augmented training sets.
pub(super) fn run_exchange(
    cfg: &FederationConfig,
    round: usize,
    train: &[Dataset],
) -> Result<(Vec<Dataset>, ExchangeRecord)> {
    let uploads: Vec<PrototypeSet> = train
        .par_iter()
        .enumerate()
        .map(|(k, ds)| {
            client_prototypes(
                ds,
                k,
                cfg.k_max,
                &cfg.em,
                cfg.noise_sigma,
                derive(cfg.seed, &[tag::GMM, k as u64]),
            )
            .map_err(|e| Error::Client {
                round,
                client: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let server = |e: Error| Error::Server {
        round,
        source: Box::new(e),
    };
    let upload_serialized = uploads
        .iter()
        .map(|p| count_vector_floats(&p.to_json()?))
        .collect::<Result<Vec<_>>>()
        .map_err(server)?;
    let global: GlobalPrototypes =
        aggregate(&uploads, &cfg.aggregation, derive(cfg.seed, &[tag::AGG])).map_err(server)?;
    let download_serialized = count_vector_floats(&global.to_json().map_err(server)?).map_err(server)?;

    let augmented: Vec<Dataset> = train
        .par_iter()
        .enumerate()
        .map(|(k, ds)| {
            let policy = AugmentationPolicy {
                seed: derive(cfg.seed, &[tag::AUG, k as u64, cfg.augmentation.seed]),
                ..cfg.augmentation.clone()
            };
            augment(ds, &global, &policy).map_err(|e| Error::Client {
                round,
                client: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let record = ExchangeRecord {
        upload_counts: uploads.iter().map(PrototypeSet::class_counts).collect(),
        upload_serialized,
        global_counts: global.class_counts(),
        download_serialized,
        synthetic_added: augmented.iter().zip(train).map(|(a, t)| a.len() - t.len()).collect(),
    };
    Ok((augmented, record))
}
