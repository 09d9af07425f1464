use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RoundMetrics;
use crate::error::Result;

/// Prototype payload sizes for one client, in floats and as fractions of
/// the model size `d_w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadCost {
    pub upload_floats: usize,
    pub download_floats: usize,
    pub upload_ratio: f64,
    pub download_ratio: f64,
    pub total_ratio: f64,
}

/// `upload = sum(m_k) * d_x` over the client's classes and
/// `download = sum(m_k') * d_x` over the global classes.
pub fn payload_cost(d_w: usize, d_x: usize, upload_per_class: &[usize], download_per_class: &[usize]) -> PayloadCost {
    let up = upload_per_class.iter().sum::<usize>() * d_x;
    let down = download_per_class.iter().sum::<usize>() * d_x;
    let dw = d_w as f64;
    PayloadCost {
        upload_floats: up,
        download_floats: down,
        upload_ratio: up as f64 / dw,
        download_ratio: down as f64 / dw,
        total_ratio: (up + down) as f64 / dw,
    }
}

/// Uniform case: `classes` local classes with `m_k` prototypes each and
/// `classes_global` global classes with `m_k_global` each.
pub fn uniform_payload_cost(
    d_w: usize,
    d_x: usize,
    m_k: usize,
    m_k_global: usize,
    classes: usize,
    classes_global: usize,
) -> PayloadCost {
    payload_cost(d_w, d_x, &vec![m_k; classes], &vec![m_k_global; classes_global])
}

/// Number of floats that are elements of JSON arrays, i.e. prototype vector
/// coordinates without any object framing.
pub fn count_vector_floats(json: &str) -> Result<usize> {
    fn walk(v: &Value, in_array: bool) -> usize {
        match v {
            Value::Number(_) if in_array => 1,
            Value::Array(items) => items.iter().map(|x| walk(x, true)).sum(),
            Value::Object(map) => map.values().map(|x| walk(x, false)).sum(),
            _ => 0,
        }
    }
    Ok(walk(&serde_json::from_str(json)?, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommCostReport {
    pub d_w: usize,
    pub d_x: usize,
    /// Model floats each client sends and receives per round.
    pub model_floats_per_round: usize,
    pub exchange_round: Option<usize>,
    /// Analytic prototype payload per client; empty without an exchange.
    pub clients: Vec<PayloadCost>,
    /// Whether every analytic count equals the serialized count.
    pub serialized_match: bool,
}

/// Prototype communication cost of a finished run, recomputed from the
/// per-class prototype counts and checked against the payloads that were
/// actually serialized.
pub fn comm_cost_report(run: &[RoundMetrics], d_w: usize, d_x: usize) -> CommCostReport {
    let exchange = run.iter().find_map(|m| m.exchange.as_ref().map(|e| (m.round, e)));
    let mut clients = Vec::new();
    let mut serialized_match = true;
    if let Some((_, ex)) = exchange {
        let global: Vec<usize> = ex.global_counts.iter().map(|&(_, n)| n).collect();
        for (k, counts) in ex.upload_counts.iter().enumerate() {
            let local: Vec<usize> = counts.iter().map(|&(_, n)| n).collect();
            let cost = payload_cost(d_w, d_x, &local, &global);
            serialized_match &= cost.upload_floats == ex.upload_serialized[k];
            serialized_match &= cost.download_floats == ex.download_serialized;
            clients.push(cost);
        }
    }
    CommCostReport {
        d_w,
        d_x,
        model_floats_per_round: 2 * d_w,
        exchange_round: exchange.map(|(r, _)| r),
        clients,
        serialized_match,
    }
}
