//! Next-token predictors.
//!
//! Every predictor maps a [`ContextSequence`] to a length-`k` probability
//! vector. The four reference algorithms cross {unigram, bigram} context
//! statistics with {retrieval over a known chain set, inference from the
//! context alone}. Two retrieval variants emit the retrieved chain's
//! stationary distribution instead of its transition row, four control
//! predictors ignore the task, and [`Predictor::External`] replays answers
//! recorded by some other system.

mod controls;
mod inference;
mod retrieval;
mod table;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::{ChainSet, ContextSequence, DgpError, TransitionMatrix};

pub use controls::{control, control_set, even_states_vector, EVEN_STATES_K};
pub use inference::{bi_inf_matrix, bi_inf_predict, uni_inf_predict};
pub use retrieval::{
    bi_ret_predict, bi_ret_up_predict, retrieval_posterior, uni_ret_predict, uni_ret_up_predict,
    Emission, Likelihood, RetrievalIndex,
};
pub use table::{PredictionRecord, PredictionTable, PREDICTION_TABLE_VERSION};

/// Tolerance on the sum of any returned probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;
/// Looser tolerance accepted when ingesting external predictions.
pub const EXTERNAL_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("predictor requires a non-empty context")]
    EmptyContext,
    #[error("context token {state} is out of range for k = {k}")]
    StateOutOfRange { state: usize, k: usize },
    #[error("no stored prediction for context {}", format_context(.0))]
    MissingContext(Vec<usize>),
    #[error("invalid probability vector: {0}")]
    InvalidProbabilityVector(String),
    #[error("even-states control is defined for k = 10 only (got k = {0})")]
    EvenStatesRequiresK10(usize),
    #[error("unknown predictor `{0}`")]
    UnknownPredictor(String),
    #[error("predictor `{0}` needs a chain set")]
    MissingChainSet(String),
    #[error("prediction table: {0}")]
    TableFormat(String),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_context(tokens: &[usize]) -> String {
    const SHOWN: usize = 12;
    let head: Vec<String> = tokens.iter().take(SHOWN).map(usize::to_string).collect();
    if tokens.len() > SHOWN {
        format!("[{}, ... ({} tokens)]", head.join(", "), tokens.len())
    } else {
        format!("[{}]", head.join(", "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    UniRet,
    BiRet,
    UniInf,
    BiInf,
    UniRetUp,
    BiRetUp,
    ControlFrozenMatrix,
    ControlFrozenStationary,
    ControlEvenStates,
    ControlDeltaZero,
    External,
}

impl PredictorKind {
    /// The four reference algorithms in their canonical order.
    pub const MAIN: [PredictorKind; 4] = [
        PredictorKind::UniRet,
        PredictorKind::BiRet,
        PredictorKind::UniInf,
        PredictorKind::BiInf,
    ];

    pub const CONTROLS: [PredictorKind; 4] = [
        PredictorKind::ControlFrozenMatrix,
        PredictorKind::ControlFrozenStationary,
        PredictorKind::ControlEvenStates,
        PredictorKind::ControlDeltaZero,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::UniRet => "uni_ret",
            PredictorKind::BiRet => "bi_ret",
            PredictorKind::UniInf => "uni_inf",
            PredictorKind::BiInf => "bi_inf",
            PredictorKind::UniRetUp => "uni_ret_up",
            PredictorKind::BiRetUp => "bi_ret_up",
            PredictorKind::ControlFrozenMatrix => "control_frozen_matrix",
            PredictorKind::ControlFrozenStationary => "control_frozen_stationary",
            PredictorKind::ControlEvenStates => "control_even_states",
            PredictorKind::ControlDeltaZero => "control_delta_zero",
            PredictorKind::External => "external",
        }
    }

    pub fn needs_chain_set(self) -> bool {
        matches!(
            self,
            PredictorKind::UniRet
                | PredictorKind::BiRet
                | PredictorKind::UniRetUp
                | PredictorKind::BiRetUp
        )
    }

    pub fn is_control(self) -> bool {
        Self::CONTROLS.contains(&self)
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = PredictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = [
            PredictorKind::UniRet,
            PredictorKind::BiRet,
            PredictorKind::UniInf,
            PredictorKind::BiInf,
            PredictorKind::UniRetUp,
            PredictorKind::BiRetUp,
            PredictorKind::ControlFrozenMatrix,
            PredictorKind::ControlFrozenStationary,
            PredictorKind::ControlEvenStates,
            PredictorKind::ControlDeltaZero,
            PredictorKind::External,
        ];
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        all.into_iter()
            .find(|k| k.as_str() == normalized)
            .ok_or_else(|| PredictError::UnknownPredictor(s.to_string()))
    }
}

/// A next-token predictor with its payload.
#[derive(Clone, Debug)]
pub enum Predictor {
    UniRet(Arc<RetrievalIndex>),
    BiRet(Arc<RetrievalIndex>),
    UniInf {
        k: usize,
    },
    BiInf {
        k: usize,
    },
    UniRetUp(Arc<RetrievalIndex>),
    BiRetUp(Arc<RetrievalIndex>),
    ControlFrozenMatrix(Arc<TransitionMatrix>),
    ControlFrozenStationary(Arc<Vec<f64>>),
    /// Only defined for `k = 10`.
    ControlEvenStates,
    ControlDeltaZero {
        k: usize,
    },
    External(Arc<PredictionTable>),
}

impl Predictor {
    /// Build one of the task-aware or inference predictors.
    ///
    /// Retrieval kinds need `chain_set`; controls and `External` are built
    /// with [`control_set`] and [`Predictor::External`] instead.
    pub fn builtin(
        kind: PredictorKind,
        k: usize,
        chain_set: Option<&Arc<ChainSet>>,
    ) -> Result<Self, PredictError> {
        let index = || {
            chain_set
                .map(|s| Arc::new(RetrievalIndex::new(Arc::clone(s))))
                .ok_or_else(|| PredictError::MissingChainSet(kind.to_string()))
        };
        Ok(match kind {
            PredictorKind::UniRet => Predictor::UniRet(index()?),
            PredictorKind::BiRet => Predictor::BiRet(index()?),
            PredictorKind::UniRetUp => Predictor::UniRetUp(index()?),
            PredictorKind::BiRetUp => Predictor::BiRetUp(index()?),
            PredictorKind::UniInf => Predictor::UniInf { k },
            PredictorKind::BiInf => Predictor::BiInf { k },
            PredictorKind::ControlEvenStates => {
                if k != EVEN_STATES_K {
                    return Err(PredictError::EvenStatesRequiresK10(k));
                }
                Predictor::ControlEvenStates
            }
            PredictorKind::ControlDeltaZero => Predictor::ControlDeltaZero { k },
            other => return Err(PredictError::UnknownPredictor(other.to_string())),
        })
    }

    /// Retrieval predictors sharing one precomputed index.
    pub fn retrieval(kind: PredictorKind, index: &Arc<RetrievalIndex>) -> Option<Self> {
        let index = Arc::clone(index);
        match kind {
            PredictorKind::UniRet => Some(Predictor::UniRet(index)),
            PredictorKind::BiRet => Some(Predictor::BiRet(index)),
            PredictorKind::UniRetUp => Some(Predictor::UniRetUp(index)),
            PredictorKind::BiRetUp => Some(Predictor::BiRetUp(index)),
            _ => None,
        }
    }

    /// The four reference algorithms over `chain_set`.
    pub fn main_set(chain_set: &Arc<ChainSet>) -> Vec<Predictor> {
        let index = Arc::new(RetrievalIndex::new(Arc::clone(chain_set)));
        let k = chain_set.k();
        vec![
            Predictor::UniRet(Arc::clone(&index)),
            Predictor::BiRet(index),
            Predictor::UniInf { k },
            Predictor::BiInf { k },
        ]
    }

    pub fn kind(&self) -> PredictorKind {
        match self {
            Predictor::UniRet(_) => PredictorKind::UniRet,
            Predictor::BiRet(_) => PredictorKind::BiRet,
            Predictor::UniInf { .. } => PredictorKind::UniInf,
            Predictor::BiInf { .. } => PredictorKind::BiInf,
            Predictor::UniRetUp(_) => PredictorKind::UniRetUp,
            Predictor::BiRetUp(_) => PredictorKind::BiRetUp,
            Predictor::ControlFrozenMatrix(_) => PredictorKind::ControlFrozenMatrix,
            Predictor::ControlFrozenStationary(_) => PredictorKind::ControlFrozenStationary,
            Predictor::ControlEvenStates => PredictorKind::ControlEvenStates,
            Predictor::ControlDeltaZero { .. } => PredictorKind::ControlDeltaZero,
            Predictor::External(_) => PredictorKind::External,
        }
    }

    /// Kind name, or `external:<label>` for tables.
    pub fn label(&self) -> String {
        match self {
            Predictor::External(table) => format!("external:{}", table.label()),
            other => other.kind().to_string(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Predictor::UniRet(ix)
            | Predictor::BiRet(ix)
            | Predictor::UniRetUp(ix)
            | Predictor::BiRetUp(ix) => ix.k(),
            Predictor::UniInf { k }
            | Predictor::BiInf { k }
            | Predictor::ControlDeltaZero { k } => *k,
            Predictor::ControlFrozenMatrix(t) => t.k(),
            Predictor::ControlFrozenStationary(v) => v.len(),
            Predictor::ControlEvenStates => EVEN_STATES_K,
            Predictor::External(table) => table.k(),
        }
    }

    /// Next-token distribution given `context`.
    pub fn predict(&self, context: &ContextSequence) -> Result<Vec<f64>, PredictError> {
        let k = self.k();
        if let Some(&state) = context.tokens.iter().find(|&&s| s >= k) {
            return Err(PredictError::StateOutOfRange { state, k });
        }
        match self {
            Predictor::UniRet(ix) => uni_ret_predict(ix, context),
            Predictor::BiRet(ix) => bi_ret_predict(ix, context),
            Predictor::UniRetUp(ix) => uni_ret_up_predict(ix, context),
            Predictor::BiRetUp(ix) => bi_ret_up_predict(ix, context),
            Predictor::UniInf { k } => uni_inf_predict(context, *k),
            Predictor::BiInf { k } => Ok(bi_inf_predict(context, *k)),
            Predictor::ControlFrozenMatrix(t) => {
                let last = context.last().ok_or(PredictError::EmptyContext)?;
                Ok(t.row(last).to_vec())
            }
            Predictor::ControlFrozenStationary(v) => Ok(v.as_ref().clone()),
            Predictor::ControlEvenStates => Ok(even_states_vector(EVEN_STATES_K)?),
            Predictor::ControlDeltaZero { k } => {
                let mut v = vec![0.0; *k];
                v[0] = 1.0;
                Ok(v)
            }
            Predictor::External(table) => table.lookup(context),
        }
    }
}

/// Anything that answers next-token queries: built-in predictors, LIA
/// mixtures, planted targets.
pub trait NextTokenModel: Sync {
    fn predict(&self, context: &ContextSequence) -> Result<Vec<f64>, PredictError>;
    fn label(&self) -> String;
}

impl NextTokenModel for Predictor {
    fn predict(&self, context: &ContextSequence) -> Result<Vec<f64>, PredictError> {
        Predictor::predict(self, context)
    }

    fn label(&self) -> String {
        Predictor::label(self)
    }
}

/// Check `v` is a probability vector of length `k` to `tolerance`.
pub fn validate_probability_vector(
    v: &[f64],
    k: usize,
    tolerance: f64,
) -> Result<(), PredictError> {
    if v.len() != k {
        return Err(PredictError::InvalidProbabilityVector(format!(
            "expected {k} entries, got {}",
            v.len()
        )));
    }
    if let Some((i, x)) = v
        .iter()
        .enumerate()
        .find(|(_, x)| !(**x >= 0.0 && x.is_finite()))
    {
        return Err(PredictError::InvalidProbabilityVector(format!(
            "entry {i} = {x} is negative or not finite"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(PredictError::InvalidProbabilityVector(format!(
            "entries sum to {sum}"
        )));
    }
    Ok(())
}
