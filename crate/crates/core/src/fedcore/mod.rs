//! Simulated server and clients for FedAvg, FedProx and FedP3E.
//!
//! Every round the server broadcasts the global model, all clients train
//! locally in parallel, and the server takes the sample-weighted mean of the
//! returned models. Under FedP3E a single prototype exchange may happen at
//! the trigger round: clients upload noisy per-class GMM means, the server
//! reclusters them per class and broadcasts the result, and each client
//! appends SMOTE samples drawn between the global prototypes to its
//! training set for the remaining rounds.

mod aggregate;
mod comm;
mod exchange;

pub use aggregate::{fedavg_aggregate, fedavg_aggregate_trainable};
pub use comm::{comm_cost_report, count_vector_floats, payload_cost, uniform_payload_cost, CommCostReport, PayloadCost};
pub use exchange::{client_prototypes, ExchangeRecord};

use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datakit::{ClientData, Dataset};
use crate::error::{Error, Result};
use crate::gmmproto::EmConfig;
use crate::neuralnet::{
    build_model, confusion, train_local, Confusion, EvalReport, HiddenLayer, ModelParams, ModelSpec, TrainConfig,
};
use crate::protoagg::AggregationConfig;
use crate::seeding::{derive, tag};
use crate::smoteaug::AugmentationPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    #[default]
    #[serde(rename = "fedp3e")]
    FedP3E,
}

impl Strategy {
    pub fn key(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx => "fedprox",
            Strategy::FedP3E => "fedp3e",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::FedAvg => "FedAvg",
            Strategy::FedProx => "FedProx",
            Strategy::FedP3E => "FedP3E",
        })
    }
}

/// How per-client test results combine into the global figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyWeighting {
    /// Pool all client test sets, which weights clients by test size.
    #[default]
    TestSize,
    /// Plain mean of the per-client reports.
    Unweighted,
}

/// Model shape apart from the input width and class count, which come from
/// the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub hidden: Vec<HiddenLayer>,
    pub dropout_p: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        let r = ModelSpec::reference(1);
        Self {
            hidden: r.hidden,
            dropout_p: r.dropout_p,
            bn_momentum: r.bn_momentum,
            bn_epsilon: r.bn_epsilon,
        }
    }
}

impl Architecture {
    pub fn spec(&self, input_dim: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: self.hidden.clone(),
            dropout_p: self.dropout_p,
            output_classes: classes,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    /// Label for output files; defaults to the strategy key.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub strategy: Strategy,
    pub clients: usize,
    pub rounds: usize,
    /// Exchange threshold on mean global accuracy.
    pub threshold: f64,
    /// The only round at which the exchange can fire.
    pub trigger_round: usize,
    pub noise_sigma: f64,
    /// Proximal coefficient, used only by FedProx.
    pub prox_mu: f64,
    /// Local optimisation; `train.epochs` is the per-round epoch count.
    pub train: TrainConfig,
    pub model: Architecture,
    pub augmentation: AugmentationPolicy,
    pub em: EmConfig,
    pub k_max: usize,
    pub aggregation: AggregationConfig,
    /// Average batch-norm running statistics along with the weights.
    pub aggregate_bn_stats: bool,
    pub accuracy_weighting: AccuracyWeighting,
    /// Write a snapshot of the global model after every round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            name: None,
            strategy: Strategy::default(),
            clients: 3,
            rounds: 20,
            threshold: 0.97,
            trigger_round: 6,
            noise_sigma: 0.01,
            prox_mu: 0.0,
            train: TrainConfig::default(),
            model: Architecture::default(),
            augmentation: AugmentationPolicy::default(),
            em: EmConfig::default(),
            k_max: 5,
            aggregation: AggregationConfig::default(),
            aggregate_bn_stats: true,
            accuracy_weighting: AccuracyWeighting::default(),
            checkpoint_dir: None,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.strategy.key().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 1 {
            return Err(Error::config("clients must be >= 1"));
        }
        if self.rounds < 1 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::config("threshold must be in (0,1]"));
        }
        if self.trigger_round < 1 || self.trigger_round > self.rounds {
            return Err(Error::config("trigger_round must be in [1, rounds]"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        if !(self.prox_mu >= 0.0) || !self.prox_mu.is_finite() {
            return Err(Error::config("prox_mu must be >= 0"));
        }
        if self.strategy == Strategy::FedProx && self.prox_mu <= 0.0 {
            return Err(Error::config("fedprox requires prox_mu > 0"));
        }
        if self.train.prox_mu != 0.0 {
            return Err(Error::config("set prox_mu on the federation, not in train"));
        }
        if self.k_max < 1 {
            return Err(Error::config("k_max must be >= 1"));
        }
        if self.aggregation.iters < 1 {
            return Err(Error::config("aggregation iters must be >= 1"));
        }
        if !(self.em.tol >= 0.0) || self.em.max_iter < 1 || !(self.em.var_floor > 0.0) {
            return Err(Error::config("em needs tol >= 0, max_iter >= 1 and var_floor > 0"));
        }
        self.train.validate()?;
        self.augmentation.validate()?;
        self.model.spec(1, 1).validate()
    }

    fn effective_mu(&self) -> f64 {
        match self.strategy {
            Strategy::FedProx => self.prox_mu,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    pub global: EvalReport,
    pub clients: Vec<EvalReport>,
    /// All floats sent by clients this round, models and prototypes.
    pub uploaded_floats: usize,
    /// All floats sent by the server this round, models and prototypes.
    pub downloaded_floats: usize,
    pub exchange_triggered: bool,
    pub exchange: Option<ExchangeRecord>,
    /// Mean over clients of `||w_local - w_global||` on trainable weights.
    pub mean_client_drift: f64,
}

/// Result of [`run_federation`].
#[derive(Debug, Clone, PartialEq)]
pub struct FederationRun {
    pub rounds: Vec<RoundMetrics>,
    pub model: ModelParams,
}

impl FederationRun {
    pub fn exchange_round(&self) -> Option<usize> {
        self.rounds.iter().find(|m| m.exchange_triggered).map(|m| m.round)
    }

    pub fn final_metrics(&self) -> &RoundMetrics {
        self.rounds.last().expect("a run has at least one round")
    }
}

/// Decision taken at the start of round `t`: FedP3E only, only at the
/// trigger round, at most once, and only if the mean global accuracy of the
/// earlier rounds is below the threshold. No earlier rounds count as
/// accuracy 0.
pub fn should_trigger_exchange(history: &[RoundMetrics], cfg: &FederationConfig, t: usize) -> bool {
    if cfg.strategy != Strategy::FedP3E || t != cfg.trigger_round {
        return false;
    }
    if history.iter().any(|m| m.exchange_triggered) {
        return false;
    }
    let window: Vec<f64> = history
        .iter()
        .filter(|m| m.round < cfg.trigger_round)
        .map(|m| m.global.accuracy)
        .collect();
    let mean = if window.is_empty() {
        0.0
    } else {
        window.iter().sum::<f64>() / window.len() as f64
    };
    mean < cfg.threshold
}

fn mean_report(reports: &[EvalReport]) -> EvalReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    EvalReport {
        accuracy: avg(|r| r.accuracy),
        macro_precision: avg(|r| r.macro_precision),
        macro_recall: avg(|r| r.macro_recall),
        macro_f1: avg(|r| r.macro_f1),
        mean_loss: avg(|r| r.mean_loss),
        n_samples: reports.iter().map(|r| r.n_samples).sum(),
    }
}

fn check_clients(cfg: &FederationConfig, data: &[ClientData]) -> Result<(usize, usize)> {
    if data.len() != cfg.clients {
        return Err(Error::config(format!(
            "config expects {} clients but {} datasets were given",
            cfg.clients,
            data.len()
        )));
    }
    let first = &data[0].train;
    for (k, c) in data.iter().enumerate() {
        for ds in [&c.train, &c.test] {
            if ds.dims() != first.dims() || ds.class_names != first.class_names {
                return Err(Error::shape(format!("client {k} data does not match client 0 in width or classes")));
            }
        }
        if c.train.is_empty() || c.test.is_empty() {
            return Err(Error::EmptyDataset("every client needs training and test samples"));
        }
    }
    Ok((first.dims(), first.n_classes()))
}

/// Execute `cfg.rounds` rounds over `data` (one entry per client).
///
/// Client work within a round runs on the rayon pool. All randomness comes
/// from seeds derived from `cfg.seed`, the round and the client index, so
/// results do not depend on thread count.
pub fn run_federation(cfg: &FederationConfig, data: &[ClientData]) -> Result<FederationRun> {
    cfg.validate()?;
    let (d_x, n_classes) = check_clients(cfg, data)?;
    let spec = cfg.model.spec(d_x, n_classes);
    spec.validate()?;
    let mut global = build_model(&spec, derive(cfg.seed, &[tag::INIT]))?;
    let d_w = global.trainable_count();
    let mu = cfg.effective_mu();
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut train: Vec<Dataset> = data.iter().map(|c| c.train.clone()).collect();
    let mut history: Vec<RoundMetrics> = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let triggered = should_trigger_exchange(&history, cfg, t);

        let updates: Vec<(ModelParams, usize)> = train
            .par_iter()
            .enumerate()
            .map(|(k, ds)| {
                let tc = TrainConfig {
                    prox_mu: mu,
                    seed: derive(cfg.seed, &[tag::TRAIN, cfg.train.seed, t as u64, k as u64]),
                    ..cfg.train.clone()
                };
                let anchor = (mu > 0.0).then_some(&global);
                train_local(&global, ds, &tc, anchor)
                    .map(|u| (u.params, ds.len()))
                    .map_err(|e| Error::Client {
                        round: t,
                        client: k,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<_>>()?;

        let drift = updates
            .iter()
            .map(|(p, _)| p.trainable_sq_distance(&global).sqrt())
            .sum::<f64>()
            / updates.len() as f64;
        let aggregated = if cfg.aggregate_bn_stats {
            fedavg_aggregate(&updates)
        } else {
            fedavg_aggregate_trainable(&updates)
        };
        global = aggregated.map_err(|e| Error::Server {
            round: t,
            source: Box::new(e),
        })?;
        if !global.is_finite() {
            return Err(Error::Server {
                round: t,
                source: Box::new(Error::invalid("aggregated model is not finite")),
            });
        }

        let confusions: Vec<Confusion> = data
            .par_iter()
            .enumerate()
            .map(|(k, c)| {
                confusion(&global, &c.test).map_err(|e| Error::Client {
                    round: t,
                    client: k,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        let client_reports: Vec<EvalReport> = confusions.iter().map(Confusion::report).collect();
        let global_report = match cfg.accuracy_weighting {
            AccuracyWeighting::TestSize => {
                let mut pooled = Confusion::new(n_classes);
                for c in &confusions {
                    pooled.merge(c);
                }
                pooled.report()
            }
            AccuracyWeighting::Unweighted => mean_report(&client_reports),
        };

        let mut uploaded = cfg.clients * d_w;
        let mut downloaded = cfg.clients * d_w;
        let mut exchange = None;
        if triggered {
            let (augmented, record) = exchange::run_exchange(cfg, t, &train)?;
            uploaded += record.upload_serialized.iter().sum::<usize>();
            downloaded += cfg.clients * record.download_serialized;
            train = augmented;
            exchange = Some(record);
        }

        if let Some(dir) = &cfg.checkpoint_dir {
            let path = dir.join(format!("{}_round_{t:03}.bin", cfg.label()));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            global.write_snapshot(std::io::BufWriter::new(file))?;
        }

        history.push(RoundMetrics {
            round: t,
            global: global_report,
            clients: client_reports,
            uploaded_floats: uploaded,
            downloaded_floats: downloaded,
            exchange_triggered: triggered,
            exchange,
            mean_client_drift: drift,
        });
    }
    Ok(FederationRun {
        rounds: history,
        model: global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(round: usize, accuracy: f64) -> RoundMetrics {
        RoundMetrics {
            round,
            global: EvalReport {
                accuracy,
                macro_precision: 0.0,
                macro_recall: 0.0,
                macro_f1: 0.0,
                mean_loss: 0.0,
                n_samples: 1,
            },
            clients: Vec::new(),
            uploaded_floats: 0,
            downloaded_floats: 0,
            exchange_triggered: false,
            exchange: None,
            mean_client_drift: 0.0,
        }
    }

    fn history(acc: f64, rounds: usize) -> Vec<RoundMetrics> {
        (1..=rounds).map(|r| metrics(r, acc)).collect()
    }

    #[test]
    fn trigger_rule() {
        let cfg = FederationConfig::default();
        assert!(should_trigger_exchange(&history(0.96, 5), &cfg, 6));
        assert!(!should_trigger_exchange(&history(0.98, 5), &cfg, 6));
        assert!(!should_trigger_exchange(&history(0.96, 6), &cfg, 7));
        let mut h = history(0.5, 5);
        h[4].exchange_triggered = true;
        assert!(!should_trigger_exchange(&h, &cfg, 6));
        let avg = FederationConfig {
            strategy: Strategy::FedAvg,
            ..FederationConfig::default()
        };
        assert!(!should_trigger_exchange(&history(0.1, 5), &avg, 6));
    }

    #[test]
    fn trigger_at_first_round_with_empty_window() {
        let cfg = FederationConfig {
            trigger_round: 1,
            ..FederationConfig::default()
        };
        assert!(should_trigger_exchange(&[], &cfg, 1));
    }

    #[test]
    fn validation_messages() {
        let bad = |f: fn(&mut FederationConfig)| {
            let mut c = FederationConfig::default();
            f(&mut c);
            c.validate().unwrap_err().to_string()
        };
        assert!(bad(|c| c.threshold = 1.5).contains("threshold must be in (0,1]"));
        assert!(bad(|c| c.trigger_round = 21).contains("trigger_round"));
        assert!(bad(|c| c.strategy = Strategy::FedProx).contains("prox_mu > 0"));
        assert!(bad(|c| c.noise_sigma = -0.1).contains("noise_sigma"));
        FederationConfig::default().validate().unwrap();
    }

    #[test]
    fn default_architecture_is_reference() {
        assert_eq!(Architecture::default().spec(115, 3), ModelSpec::reference(115));
        assert_eq!(Architecture::default().spec(115, 3).trainable_count(), 23_683);
    }

    #[test]
    fn strategy_serde_names() {
        assert_eq!(serde_json::to_string(&Strategy::FedP3E).unwrap(), "\"fedp3e\"");
        assert_eq!(serde_json::from_str::<Strategy>("\"fedprox\"").unwrap(), Strategy::FedProx);
    }
}
