//! Desk-scale studies built from the other modules.
//!
//! * [`run_metric_sweep`] evaluates predictors over a grid of chain-set
//!   sizes, state counts and context lengths.
//! * [`run_highdim_experiment`] compares nearest-neighbour and mean-matrix
//!   distances to a fresh chain as the state count grows.
//! * [`run_lia_study`] fits LIA on in-distribution contexts and predicts
//!   out-of-distribution KL. [`ContextManifest`] lists the contexts it will
//!   query so an external model can answer them ahead of time.

mod highdim;
mod lia_study;
mod manifest;
mod sweep;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dgp::{ChainSet, DgpError};
use crate::evaluation::EvalError;
use crate::lia::LiaError;
use crate::predictors::{control, PredictError, Predictor, PredictorKind, RetrievalIndex};

pub use highdim::{
    read_highdim_rows, run_highdim_experiment, write_highdim_rows, HighDimRow, HighDimSpec,
    HIGHDIM_COLUMNS,
};
pub use lia_study::{
    run_lia_study, LiaStudyReplicate, LiaStudyResult, LiaStudySpec, FIT_KEY, OOD_KEY,
};
pub use manifest::{ContextManifest, ManifestEntry, MANIFEST_VERSION};
pub use sweep::{
    run_metric_sweep, run_sweep_to_file, sweep_manifest, EvalRole, ExternalTableSpec, SweepMetric,
    SweepOutcome, SweepSpec,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("{} manifest entries have no answer, first: {}", .0.len(), describe_missing(.0))]
    MissingContexts(Vec<ManifestEntry>),
    #[error("manifest: {0}")]
    ManifestFormat(String),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Lia(#[from] LiaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn describe_missing(entries: &[ManifestEntry]) -> String {
    entries
        .first()
        .map(|e| format!("{} (context of length {})", e.cell_key, e.context.len()))
        .unwrap_or_default()
}

/// First 16 hex digits of the SHA-256 of `value`'s JSON form.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// A built-in predictor for `kind`; controls draw their frozen parameters
/// from `control_seed`.
pub fn build_predictor(
    kind: PredictorKind,
    k: usize,
    index: &Arc<RetrievalIndex>,
    control_seed: u64,
) -> Result<Predictor, PredictError> {
    if let Some(p) = Predictor::retrieval(kind, index) {
        return Ok(p);
    }
    if kind.is_control() {
        return control(kind, k, control_seed);
    }
    Predictor::builtin(kind, k, None)
}

pub(crate) fn retrieval_index(set: &Arc<ChainSet>) -> Arc<RetrievalIndex> {
    Arc::new(RetrievalIndex::new(Arc::clone(set)))
}

/// Write `bytes` next to `path` and rename over it.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"k": 10, "N": 64}));
        assert_eq!(a.len(), 16);
        assert_eq!(a, config_hash(&serde_json::json!({"k": 10, "N": 64})));
        assert_ne!(a, config_hash(&serde_json::json!({"k": 10, "N": 32})));
    }
}
