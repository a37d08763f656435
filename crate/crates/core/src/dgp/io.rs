//! JSON chain-set files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChainRole, ChainSet, DgpError, Provenance, TransitionMatrix, LOAD_ROW_SUM_TOLERANCE};

pub const CHAIN_SET_FORMAT_VERSION: u32 = 1;

/// On-disk layout of a chain set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainSetFile {
    pub format_version: u32,
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub role: ChainRole,
    pub prior: Vec<f64>,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl From<&ChainSet> for ChainSetFile {
    fn from(set: &ChainSet) -> Self {
        let prov = set.provenance();
        Self {
            format_version: CHAIN_SET_FORMAT_VERSION,
            k: set.k(),
            n: set.len(),
            alpha: prov.alpha,
            master_seed: prov.master_seed,
            role: prov.role,
            prior: set.prior().to_vec(),
            matrices: set
                .matrices()
                .iter()
                .map(TransitionMatrix::to_rows)
                .collect(),
        }
    }
}

impl TryFrom<ChainSetFile> for ChainSet {
    type Error = DgpError;

    fn try_from(file: ChainSetFile) -> Result<Self, Self::Error> {
        if file.format_version != CHAIN_SET_FORMAT_VERSION {
            return Err(DgpError::UnsupportedVersion(file.format_version));
        }
        if file.matrices.len() != file.n || file.prior.len() != file.n {
            return Err(DgpError::InconsistentFile(format!(
                "N = {} but {} matrices and {} prior entries",
                file.n,
                file.matrices.len(),
                file.prior.len()
            )));
        }
        let matrices = file
            .matrices
            .into_iter()
            .map(|rows| TransitionMatrix::from_rows_renormalized(rows, LOAD_ROW_SUM_TOLERANCE))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(m) = matrices.iter().find(|m| m.k() != file.k) {
            return Err(DgpError::StateCountMismatch {
                expected: file.k,
                found: m.k(),
            });
        }
        let mut prior = file.prior;
        let sum: f64 = prior.iter().sum();
        if (sum - 1.0).abs() > LOAD_ROW_SUM_TOLERANCE {
            return Err(DgpError::InvalidPrior(format!("prior sums to {sum}")));
        }
        if prior.iter().all(|p| *p >= 0.0) {
            prior.iter_mut().for_each(|p| *p /= sum);
        }
        ChainSet::new(
            matrices,
            prior,
            Provenance {
                master_seed: file.master_seed,
                role: file.role,
                alpha: file.alpha,
            },
        )
    }
}

impl ChainSet {
    pub fn to_json(&self) -> Result<String, DgpError> {
        Ok(serde_json::to_string_pretty(&ChainSetFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self, DgpError> {
        let file: ChainSetFile = serde_json::from_str(text)?;
        ChainSet::try_from(file)
    }
}

pub fn save_chain_set(set: &ChainSet, path: impl AsRef<Path>) -> Result<(), DgpError> {
    fs::write(path, set.to_json()?)?;
    Ok(())
}

pub fn load_chain_set(path: impl AsRef<Path>) -> Result<ChainSet, DgpError> {
    ChainSet::from_json(&fs::read_to_string(path)?)
}
