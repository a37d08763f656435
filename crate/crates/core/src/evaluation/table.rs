//! Flat metric records in CSV.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricResult};

/// Column order of metric tables. The first eleven columns are fixed;
/// `config_hash` and `step` carry provenance, `phase` the quadrant of
/// `phase_score` rows and `error` the message of a failed cell.
pub const METRIC_COLUMNS: [&str; 15] = [
    "predictor",
    "chain_role",
    "N",
    "k",
    "l_eval",
    "n_rep",
    "metric",
    "value",
    "stderr",
    "clamp_count",
    "seed",
    "config_hash",
    "step",
    "phase",
    "error",
];

/// One row of a metric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub predictor: String,
    pub chain_role: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub k: usize,
    pub l_eval: usize,
    pub n_rep: usize,
    pub metric: String,
    /// Empty for failed cells.
    pub value: Option<f64>,
    pub stderr: Option<f64>,
    pub clamp_count: usize,
    pub seed: u64,
    #[serde(default)]
    pub config_hash: String,
    /// Caller-supplied step label of an ingested prediction table.
    #[serde(default)]
    pub step: String,
    #[serde(default)]
    pub phase: String,
    #[serde(default)]
    pub error: String,
}

impl MetricRow {
    /// Row for a computed metric.
    pub fn from_result(result: &MetricResult, metric: &str, n: usize, k: usize) -> Self {
        Self {
            predictor: result.meta.predictor.clone(),
            chain_role: result.meta.chain_role.clone(),
            n,
            k,
            l_eval: result.meta.l_eval,
            n_rep: result.n_rep,
            metric: metric.to_string(),
            value: Some(result.value),
            stderr: Some(result.stderr),
            clamp_count: result.meta.clamp_count,
            seed: result.meta.seed,
            config_hash: String::new(),
            step: String::new(),
            phase: String::new(),
            error: String::new(),
        }
    }

    /// Key identifying the cell and metric this row belongs to.
    pub fn key(&self) -> MetricKey {
        MetricKey {
            k: self.k,
            n: self.n,
            l_eval: self.l_eval,
            n_rep: self.n_rep,
            seed: self.seed,
            predictor: self.predictor.clone(),
            step: self.step.clone(),
            metric: self.metric.clone(),
            chain_role: self.chain_role.clone(),
        }
    }

    pub fn is_error(&self) -> bool {
        !self.error.is_empty()
    }
}

/// Identity of a row; its ordering is the canonical row order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricKey {
    pub k: usize,
    pub n: usize,
    pub l_eval: usize,
    pub n_rep: usize,
    pub seed: u64,
    pub predictor: String,
    pub step: String,
    pub metric: String,
    pub chain_role: String,
}

fn csv_error(e: csv::Error) -> EvalError {
    EvalError::InvalidArgument(format!("metric table: {e}"))
}

pub fn write_metric_rows<W: Write>(w: W, rows: &[MetricRow]) -> Result<(), EvalError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    writer.write_record(METRIC_COLUMNS).map_err(csv_error)?;
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer
        .flush()
        .map_err(|e| EvalError::InvalidArgument(format!("metric table: {e}")))
}

pub fn read_metric_rows<R: Read>(r: R) -> Result<Vec<MetricRow>, EvalError> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let n_fixed = 11;
    if headers.len() < n_fixed
        || headers
            .iter()
            .take(n_fixed)
            .ne(METRIC_COLUMNS.iter().take(n_fixed).copied())
    {
        return Err(EvalError::InvalidArgument(format!(
            "metric table: unexpected header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    reader
        .deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(csv_error)
}
