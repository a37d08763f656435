//! Empirical transition matrices and the phase metrics.
//!
//! An evaluation replicate picks a ground-truth chain `T*`, draws one
//! sequence of length `l_eval` ending in each state and records the
//! predictor's next-state distribution for each as a row of `T̂`. The
//! expected KL, bigram-utilization and retrieval-proximity metrics are all
//! averages over such replicates.
//!
//! Replicate `r` derives its chain from `derive(seed, [chain, r])` and its
//! contexts from `derive(seed, [context, r, i])`, so two predictors
//! evaluated with the same seed see identical contexts, and the same chains
//! are drawn whatever `l_eval` is.

mod kl;
mod metrics;
mod table;

use std::borrow::Cow;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::dgp::{
    sample_sequence_ending_in, sample_transition_matrix, ChainSet, ContextSequence, DgpError,
    TransitionMatrix,
};
use crate::predictors::{NextTokenModel, PredictError, Predictor};
use crate::seed::{derive_seed, rng_from_seed, tag};

pub use kl::{expected_kl_rows, row_kl, uniform_matrix_kl, KlValue, CLAMP_FLOOR};
pub use metrics::{
    bigram_utilization, expected_kl_metric, phase_score, retrieval_proximity, MetricMeta,
    MetricResult, PhaseLabel, PhaseScore, UtilizationNormalizer, MAX_PROXIMITY_RATIO,
};
pub use table::{read_metric_rows, write_metric_rows, MetricKey, MetricRow, METRIC_COLUMNS};

pub const DEFAULT_L_EVAL: usize = 400;
pub const DEFAULT_N_REP: usize = 30;

const CHAIN: u64 = tag("eval-chain");
const CONTEXT: u64 = tag("eval-context");
const SHUFFLE: u64 = tag("eval-shuffle");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(
        "utilization normalizer KL(stationary ‖ T*) = {0:e} is degenerate (truth is itself i.i.d.)"
    )]
    DegenerateNormalizer(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// A predictor's outputs arranged as a transition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalTransitionEstimate {
    /// Row `i` is the prediction after a context ending in state `i`.
    pub entries: Vec<Vec<f64>>,
    pub context_length: usize,
    pub replicate_id: usize,
}

/// Where the ground-truth chain of each replicate comes from.
#[derive(Clone, Copy, Debug)]
pub enum ChainSource<'a> {
    /// The same chain for every replicate.
    Fixed(&'a TransitionMatrix),
    /// A training chain picked by the set's prior.
    InDistribution(&'a ChainSet),
    /// A fresh Dirichlet(`alpha` 1_k) chain.
    OutOfDistribution { k: usize, alpha: f64 },
}

impl ChainSource<'_> {
    pub fn role(&self) -> &'static str {
        match self {
            ChainSource::Fixed(_) => "fixed",
            ChainSource::InDistribution(_) => "ID",
            ChainSource::OutOfDistribution { .. } => "OOD",
        }
    }

    pub fn k(&self) -> usize {
        match self {
            ChainSource::Fixed(t) => t.k(),
            ChainSource::InDistribution(s) => s.k(),
            ChainSource::OutOfDistribution { k, .. } => *k,
        }
    }

    /// Chain for replicate `replicate`, plus its index for ID draws.
    pub fn draw(
        &self,
        seed: u64,
        replicate: usize,
    ) -> Result<(Cow<'_, TransitionMatrix>, Option<usize>), DgpError> {
        let mut rng = rng_from_seed(derive_seed(seed, &[CHAIN, replicate as u64]));
        Ok(match self {
            ChainSource::Fixed(t) => (Cow::Borrowed(*t), None),
            ChainSource::InDistribution(set) => {
                let n = set.pick(&mut rng);
                (Cow::Borrowed(set.matrix(n)), Some(n))
            }
            ChainSource::OutOfDistribution { k, alpha } => (
                Cow::Owned(sample_transition_matrix(*k, *alpha, &mut rng)?),
                None,
            ),
        })
    }
}

/// The chain and contexts of one evaluation replicate.
#[derive(Clone, Debug)]
pub struct Replicate {
    pub id: usize,
    pub chain: TransitionMatrix,
    pub chain_index: Option<usize>,
    /// One context per last state, in state order.
    pub contexts: Vec<ContextSequence>,
}

impl Replicate {
    /// Contexts with all but the final token permuted (Fisher–Yates).
    pub fn shuffled_contexts(&self, seed: u64) -> Vec<ContextSequence> {
        self.contexts
            .iter()
            .enumerate()
            .map(|(i, ctx)| {
                shuffle_keep_last(ctx, derive_seed(seed, &[SHUFFLE, self.id as u64, i as u64]))
            })
            .collect()
    }
}

/// Permute positions `0..t-1` uniformly, keeping the final token in place.
pub fn shuffle_keep_last(ctx: &ContextSequence, seed: u64) -> ContextSequence {
    let mut tokens = ctx.tokens.clone();
    if tokens.len() > 2 {
        let n = tokens.len() - 1;
        tokens[..n].shuffle(&mut rng_from_seed(seed));
    }
    ContextSequence {
        tokens,
        source_chain: ctx.source_chain,
    }
}

/// `k` contexts of length `l_eval` drawn from `chain`, the `i`-th ending in
/// state `i`.
pub fn evaluation_contexts(
    chain: &TransitionMatrix,
    l_eval: usize,
    seed: u64,
) -> Result<Vec<ContextSequence>, DgpError> {
    (0..chain.k())
        .map(|i| {
            sample_sequence_ending_in(chain, i, l_eval, derive_seed(seed, &[i as u64]))
                .map(|c| c.sequence)
        })
        .collect()
}

/// Build replicate `id` of an evaluation.
pub fn replicate(
    source: &ChainSource<'_>,
    l_eval: usize,
    seed: u64,
    id: usize,
) -> Result<Replicate, EvalError> {
    if l_eval == 0 {
        return Err(EvalError::InvalidArgument("l_eval must be >= 1".into()));
    }
    let (chain, chain_index) = source.draw(seed, id)?;
    let mut contexts =
        evaluation_contexts(&chain, l_eval, derive_seed(seed, &[CONTEXT, id as u64]))?;
    if let Some(n) = chain_index {
        contexts.iter_mut().for_each(|c| c.source_chain = Some(n));
    }
    Ok(Replicate {
        id,
        chain: chain.into_owned(),
        chain_index,
        contexts,
    })
}

/// All `n_rep` replicates of an evaluation.
pub fn replicate_plan(
    source: &ChainSource<'_>,
    l_eval: usize,
    n_rep: usize,
    seed: u64,
) -> Result<Vec<Replicate>, EvalError> {
    if n_rep == 0 {
        return Err(EvalError::InvalidArgument("n_rep must be >= 1".into()));
    }
    (0..n_rep)
        .map(|r| replicate(source, l_eval, seed, r))
        .collect()
}

/// Predictor outputs for a list of contexts, one row each.
pub fn estimate_from_contexts<M: NextTokenModel + ?Sized>(
    predictor: &M,
    contexts: &[ContextSequence],
    replicate_id: usize,
) -> Result<EmpiricalTransitionEstimate, EvalError> {
    let entries = contexts
        .iter()
        .map(|c| predictor.predict(c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmpiricalTransitionEstimate {
        entries,
        context_length: contexts.first().map_or(0, ContextSequence::len),
        replicate_id,
    })
}

/// Estimate `T̂` for `predictor` from sequences drawn from `chain`.
pub fn estimate_transition_matrix(
    predictor: &Predictor,
    chain: &TransitionMatrix,
    l_eval: usize,
    seed: u64,
) -> Result<EmpiricalTransitionEstimate, EvalError> {
    let rep = replicate(&ChainSource::Fixed(chain), l_eval, seed, 0)?;
    estimate_from_contexts(predictor, &rep.contexts, 0)
}

/// `Σ_i π*_i KL(T̂_i ‖ T*_i)`.
pub fn expected_kl(
    estimate: &EmpiricalTransitionEstimate,
    truth: &TransitionMatrix,
) -> Result<KlValue, EvalError> {
    expected_kl_rows(&estimate.entries, truth)
}
