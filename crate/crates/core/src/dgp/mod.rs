//! Finite Markov mixture data-generating process.
//!
//! A [`ChainSet`] holds `N` row-stochastic transition matrices over `k`
//! states plus a prior over them. Sequences are produced by picking a chain
//! from the prior, drawing the first state from that chain's stationary
//! distribution and then following its transitions.
//!
//! Every sampler takes an explicit seed; nothing here touches global RNG
//! state.

mod dirichlet;
mod io;
mod sampling;
mod stationary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dirichlet::sample_dirichlet;
pub use io::{load_chain_set, save_chain_set, ChainSetFile, CHAIN_SET_FORMAT_VERSION};
pub use sampling::{
    sample_chain_path, sample_chain_set, sample_sequence, sample_sequence_ending_in,
    sample_transition_matrix, ConditionedSequence, MAX_REJECTION_ATTEMPTS,
};
pub use stationary::stationary_distribution;

/// Row sums of constructed matrices must match 1 to this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Looser row-sum tolerance accepted when loading decimal files.
pub const LOAD_ROW_SUM_TOLERANCE: f64 = 1e-9;
/// Contract on `‖π − πT‖_∞`.
pub const STATIONARY_RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(
        "matrix must be square k x k with k >= 1 (got {rows} rows, row {row} has {cols} entries)"
    )]
    Shape {
        rows: usize,
        row: usize,
        cols: usize,
    },
    #[error("row {row} sums to {sum}, expected 1 within {tolerance:e}")]
    NotRowStochastic {
        row: usize,
        sum: f64,
        tolerance: f64,
    },
    #[error("entry ({row}, {col}) = {value} is negative or not finite")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("stationary distribution is not unique: {0}")]
    NonUniqueStationary(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("chain set matrices disagree on state count ({expected} vs {found})")]
    StateCountMismatch { expected: usize, found: usize },
    #[error("state {state} is out of range for k = {k}")]
    StateOutOfRange { state: usize, k: usize },
    #[error("sequence length must be at least 1")]
    ZeroLength,
    #[error("no sequence ending in state {state} after {attempts} rejection attempts")]
    SamplingExhausted { state: usize, attempts: usize },
    #[error("unsupported chain-set format version {0}")]
    UnsupportedVersion(u32),
    #[error("chain-set file is inconsistent: {0}")]
    InconsistentFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Hyperparameters of the data-generating process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Number of states.
    pub k: usize,
    /// Training sequence length.
    pub l: usize,
    /// Number of chains `N`.
    pub n_chains: usize,
    /// Dirichlet concentration per row element.
    pub alpha: f64,
    pub master_seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            k: 10,
            l: 512,
            n_chains: 64,
            alpha: 1.0,
            master_seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), DgpError> {
        if self.k < 2 {
            return Err(DgpError::InvalidConfig(format!(
                "k must be >= 2 (got {})",
                self.k
            )));
        }
        if self.l < 1 {
            return Err(DgpError::InvalidConfig(format!(
                "l must be >= 1 (got {})",
                self.l
            )));
        }
        if self.n_chains < 1 {
            return Err(DgpError::InvalidConfig(format!(
                "n_chains must be >= 1 (got {})",
                self.n_chains
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(DgpError::InvalidConfig(format!(
                "alpha must be a positive finite number (got {})",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// A `k x k` row-stochastic matrix with its stationary distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    entries: Vec<f64>,
    stationary: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TransitionMatrix {
    /// Build from rows, requiring row sums within [`ROW_SUM_TOLERANCE`].
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, DgpError> {
        let (k, entries) = flatten_checked(rows, ROW_SUM_TOLERANCE)?;
        Self::from_flat(k, entries)
    }

    /// Build from rows accepting row sums within `tolerance`, then
    /// renormalize each row exactly.
    pub fn from_rows_renormalized(rows: Vec<Vec<f64>>, tolerance: f64) -> Result<Self, DgpError> {
        let (k, mut entries) = flatten_checked(rows, tolerance)?;
        for row in entries.chunks_mut(k) {
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Self::from_flat(k, entries)
    }

    fn from_flat(k: usize, entries: Vec<f64>) -> Result<Self, DgpError> {
        let stationary = stationary_distribution(k, &entries)?;
        let mut cumulative = entries.clone();
        for row in cumulative.chunks_mut(k) {
            let mut acc = 0.0;
            for v in row.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        Ok(Self {
            k,
            entries,
            stationary,
            cumulative,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.k)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub(crate) fn cumulative_row(&self, i: usize) -> &[f64] {
        &self.cumulative[i * self.k..(i + 1) * self.k]
    }
}

fn flatten_checked(rows: Vec<Vec<f64>>, tolerance: f64) -> Result<(usize, Vec<f64>), DgpError> {
    let k = rows.len();
    if k == 0 {
        return Err(DgpError::Shape {
            rows: 0,
            row: 0,
            cols: 0,
        });
    }
    let mut entries = Vec::with_capacity(k * k);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != k {
            return Err(DgpError::Shape {
                rows: k,
                row: i,
                cols: row.len(),
            });
        }
        for (j, &v) in row.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DgpError::InvalidEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(DgpError::NotRowStochastic {
                row: i,
                sum,
                tolerance,
            });
        }
        entries.extend(row);
    }
    Ok((k, entries))
}

/// Which pool a chain set was drawn for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainRole {
    Train,
    Random,
}

impl ChainRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChainRole::Train => "train",
            ChainRole::Random => "random",
        }
    }
}

impl std::str::FromStr for ChainRole {
    type Err = DgpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(ChainRole::Train),
            "random" => Ok(ChainRole::Random),
            other => Err(DgpError::InvalidConfig(format!(
                "role must be `train` or `random` (got `{other}`)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub role: ChainRole,
    pub alpha: f64,
}

/// `N` transition matrices plus the prior used to pick among them.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSet {
    matrices: Vec<TransitionMatrix>,
    prior: Vec<f64>,
    provenance: Provenance,
}

impl ChainSet {
    pub fn new(
        matrices: Vec<TransitionMatrix>,
        prior: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, DgpError> {
        if matrices.is_empty() {
            return Err(DgpError::InvalidPrior(
                "chain set must hold at least one matrix".into(),
            ));
        }
        if prior.len() != matrices.len() {
            return Err(DgpError::InvalidPrior(format!(
                "prior has {} entries for {} matrices",
                prior.len(),
                matrices.len()
            )));
        }
        let k = matrices[0].k();
        if let Some(m) = matrices.iter().find(|m| m.k() != k) {
            return Err(DgpError::StateCountMismatch {
                expected: k,
                found: m.k(),
            });
        }
        if let Some(v) = prior.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(DgpError::InvalidPrior(format!(
                "entry {v} is negative or not finite"
            )));
        }
        let sum: f64 = prior.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(DgpError::InvalidPrior(format!("prior sums to {sum}")));
        }
        Ok(Self {
            matrices,
            prior,
            provenance,
        })
    }

    pub fn k(&self) -> usize {
        self.matrices[0].k()
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[TransitionMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, n: usize) -> &TransitionMatrix {
        &self.matrices[n]
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Draw a chain index from the prior.
    pub fn pick<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sampling::sample_categorical(&self.prior, rng)
    }
}

/// A token sequence over states `0..k`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextSequence {
    pub tokens: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_chain: Option<usize>,
}

impl ContextSequence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self {
            tokens,
            source_chain: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn last(&self) -> Option<usize> {
        self.tokens.last().copied()
    }

    pub fn validate(&self, k: usize) -> Result<(), DgpError> {
        match self.tokens.iter().find(|&&s| s >= k) {
            Some(&state) => Err(DgpError::StateOutOfRange { state, k }),
            None => Ok(()),
        }
    }
}

impl From<Vec<usize>> for ContextSequence {
    fn from(tokens: Vec<usize>) -> Self {
        Self::new(tokens)
    }
}
