use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datakit::ClientData;
use crate::error::{Error, Result};
use crate::fedcore::{comm_cost_report, CommCostReport, FederationConfig, FederationRun, RoundMetrics, Strategy};
use crate::neuralnet::EvalReport;

pub const METRICS_HEADER: [&str; 9] = [
    "round",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "loss",
    "up_floats",
    "down_floats",
    "exchange",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub strategy: Strategy,
    pub rounds: usize,
    pub seed: u64,
    #[serde(rename = "final")]
    pub final_report: EvalReport,
    pub exchange_round: Option<usize>,
    pub total_uploaded_floats: usize,
    pub total_downloaded_floats: usize,
    pub comm_cost: CommCostReport,
}

impl RunSummary {
    pub fn new(cfg: &FederationConfig, run: &FederationRun) -> Self {
        let d_w = run.model.trainable_count();
        let d_x = run.model.spec.input_dim;
        Self {
            name: cfg.label(),
            strategy: cfg.strategy,
            rounds: run.rounds.len(),
            seed: cfg.seed,
            final_report: run.final_metrics().global,
            exchange_round: run.exchange_round(),
            total_uploaded_floats: run.rounds.iter().map(|m| m.uploaded_floats).sum(),
            total_downloaded_floats: run.rounds.iter().map(|m| m.downloaded_floats).sum(),
            comm_cost: comm_cost_report(&run.rounds, d_w, d_x),
        }
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serde(format!("{}: {other:?}", path.display())),
    }
}

/// One row per round with the columns in [`METRICS_HEADER`].
pub fn write_metrics_csv(path: impl AsRef<Path>, rounds: &[RoundMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
    for m in rounds {
        let g = &m.global;
        w.write_record([
            m.round.to_string(),
            g.accuracy.to_string(),
            g.macro_precision.to_string(),
            g.macro_recall.to_string(),
            g.macro_f1.to_string(),
            g.mean_loss.to_string(),
            m.uploaded_floats.to_string(),
            m.downloaded_floats.to_string(),
            u8::from(m.exchange_triggered).to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_comparison(path: impl AsRef<Path>, runs: &[RunSummary]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record([
        "name",
        "strategy",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "loss",
        "exchange_round",
        "up_floats",
        "down_floats",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in runs {
        let f = &r.final_report;
        w.write_record([
            r.name.clone(),
            r.strategy.key().to_string(),
            f.accuracy.to_string(),
            f.macro_precision.to_string(),
            f.macro_recall.to_string(),
            f.macro_f1.to_string(),
            f.mean_loss.to_string(),
            r.exchange_round.map(|x| x.to_string()).unwrap_or_default(),
            r.total_uploaded_floats.to_string(),
            r.total_downloaded_floats.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ClientSizes {
    train: usize,
    test: usize,
    train_class_counts: Vec<usize>,
}

#[derive(Serialize)]
struct Summary<'a> {
    clients: Vec<ClientSizes>,
    runs: &'a [RunSummary],
}

pub fn write_summary(path: impl AsRef<Path>, runs: &[RunSummary], clients: &[ClientData]) -> Result<()> {
    let path = path.as_ref();
    let summary = Summary {
        clients: clients
            .iter()
            .map(|c| ClientSizes {
                train: c.train.len(),
                test: c.test.len(),
                train_class_counts: c.train.class_counts(),
            })
            .collect(),
        runs,
    };
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
