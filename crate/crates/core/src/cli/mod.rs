//! Experiment runner: a JSON run specification in, tidy CSV and JSON out.

mod output;

pub use output::{write_comparison, write_metrics_csv, write_summary, RunSummary, METRICS_HEADER};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datakit::{load_csv_dir, prepare_clients, synthesize, ClientData, CsvSchema, PartitionPlan, Scaling, Scenario, SyntheticSpec};
use crate::error::{Error, Result};
use crate::fedcore::{run_federation, FederationConfig, FederationRun};
use crate::seeding::derive;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    CsvDir {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Scenario(Scenario),
    /// Explicit `(class, count)` quotas per client.
    Plan(PartitionPlan),
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec::Scenario(Scenario::Iid)
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub data: DataSource,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub scaling: Scaling,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub runs: Vec<FederationConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seeds data preparation and is mixed into every run's own seed.
    #[serde(default)]
    pub seed: u64,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.runs.first() else {
            return Err(Error::config("runs must contain at least one federation config"));
        };
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction must be in (0,1)"));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        let mut labels = BTreeSet::new();
        for (i, run) in self.runs.iter().enumerate() {
            let label = run.label();
            run.validate()
                .map_err(|e| Error::config(format!("runs[{i}] ({label}): {}", strip_prefix(&e))))?;
            if run.clients != first.clients {
                return Err(Error::config(format!(
                    "runs[{i}] ({label}): clients = {} but runs[0] has {}",
                    run.clients, first.clients
                )));
            }
            if label.is_empty() || label.contains(['/', '\\']) {
                return Err(Error::config(format!("runs[{i}]: name must be non-empty without path separators")));
            }
            if !labels.insert(label.clone()) {
                return Err(Error::config(format!("runs[{i}]: duplicate run name {label:?}; set distinct `name`s")));
            }
        }
        if let PartitionSpec::Plan(plan) = &self.partition {
            if plan.n_clients() != first.clients {
                return Err(Error::config(format!(
                    "partition plan has {} clients but runs use {}",
                    plan.n_clients(),
                    first.clients
                )));
            }
        }
        Ok(())
    }

    /// Keep only runs whose name or strategy key is listed.
    pub fn select(&mut self, wanted: &[String]) -> Result<()> {
        let keep: Vec<FederationConfig> = self
            .runs
            .iter()
            .filter(|r| wanted.iter().any(|w| *w == r.label() || w == r.strategy.key()))
            .cloned()
            .collect();
        if keep.is_empty() {
            return Err(Error::config(format!("no run matches --strategies {}", wanted.join(","))));
        }
        self.runs = keep;
        Ok(())
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Read and validate a run specification. Syntax errors carry line and
/// column; unknown keys are rejected by name.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config_str(text: &str) -> Result<RunSpec> {
    let spec: RunSpec = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Load or generate the data, partition it and split every client.
pub fn load_clients(spec: &RunSpec) -> Result<Vec<ClientData>> {
    let ds = match &spec.data {
        DataSource::Synthetic(s) => synthesize(s)?,
        DataSource::CsvDir { path, schema } => load_csv_dir(path, schema)?,
    };
    let clients = spec.runs.first().map_or(0, |r| r.clients);
    let plan = match &spec.partition {
        PartitionSpec::Scenario(s) => PartitionPlan::for_scenario(*s, &ds.class_counts(), clients)?,
        PartitionSpec::Plan(p) => p.clone(),
    };
    prepare_clients(&ds, &plan, spec.scaling, spec.train_fraction, spec.seed)
}

/// The federation config actually executed for `run`.
pub fn effective_config(spec: &RunSpec, run: &FederationConfig) -> FederationConfig {
    FederationConfig {
        seed: derive(spec.seed, &[run.seed]),
        ..run.clone()
    }
}

/// Execute every run in order and write all outputs to `spec.output_dir`.
pub fn run(spec: &RunSpec) -> Result<Vec<RunSummary>> {
    spec.validate()?;
    let clients = load_clients(spec)?;
    let out = &spec.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut summaries = Vec::with_capacity(spec.runs.len());
    for run in &spec.runs {
        let cfg = effective_config(spec, run);
        let result: FederationRun = run_federation(&cfg, &clients)?;
        write_metrics_csv(out.join(format!("metrics_{}.csv", cfg.label())), &result.rounds)?;
        summaries.push(RunSummary::new(&cfg, &result));
    }
    write_summary(out.join("summary.json"), &summaries, &clients)?;
    write_comparison(out.join("comparison.csv"), &summaries)?;
    Ok(summaries)
}
