use rand::Rng;

use super::{
    dirichlet::sample_dirichlet, ChainRole, ChainSet, ContextSequence, DgpConfig, DgpError,
    Provenance, TransitionMatrix,
};
use crate::seed::{derive_seed, rng_from_seed, tag};

/// Upper bound on whole-sequence rejection attempts.
pub const MAX_REJECTION_ATTEMPTS: usize = 1_000_000;

const PRIOR: u64 = tag("prior");
const CHAIN: u64 = tag("chain");
const PICK: u64 = tag("pick");
const PATH: u64 = tag("path");

/// Index drawn from the (not necessarily normalized) weights.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

fn sample_from_cumulative<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = cumulative[cumulative.len() - 1];
    let u = rng.random::<f64>() * total;
    let idx = cumulative.partition_point(|&c| c <= u);
    if idx < cumulative.len() {
        return idx;
    }
    // u landed on the rounding gap at the top; take the last state with mass
    let mut j = cumulative.len() - 1;
    while j > 0 && cumulative[j] == cumulative[j - 1] {
        j -= 1;
    }
    j
}

/// One transition matrix with Dirichlet(`alpha` 1_k) rows.
pub fn sample_transition_matrix<R: Rng + ?Sized>(
    k: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<TransitionMatrix, DgpError> {
    let rows = (0..k).map(|_| sample_dirichlet(rng, alpha, k)).collect();
    TransitionMatrix::from_rows(rows)
}

/// Sample a chain set for `role`.
///
/// Chain `n` is drawn from its own seed `derive(master, [role, chain, n])`,
/// so the first `N` matrices of a set with `2N` chains equal the set with
/// `N` chains. The prior is an independent `Dirichlet(1_N)` draw.
pub fn sample_chain_set(config: &DgpConfig, role: ChainRole) -> Result<ChainSet, DgpError> {
    config.validate()?;
    let role_tag = tag(role.as_str());
    let matrices = (0..config.n_chains)
        .map(|n| {
            let mut rng = rng_from_seed(derive_seed(
                config.master_seed,
                &[role_tag, CHAIN, n as u64],
            ));
            sample_transition_matrix(config.k, config.alpha, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut prior_rng = rng_from_seed(derive_seed(config.master_seed, &[role_tag, PRIOR]));
    let prior = sample_dirichlet(&mut prior_rng, 1.0, config.n_chains);
    ChainSet::new(
        matrices,
        prior,
        Provenance {
            master_seed: config.master_seed,
            role,
            alpha: config.alpha,
        },
    )
}

/// `length` states from `chain`, starting from its stationary distribution.
pub fn sample_chain_path<R: Rng + ?Sized>(
    chain: &TransitionMatrix,
    length: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut path = Vec::with_capacity(length);
    if length == 0 {
        return path;
    }
    let mut state = sample_categorical(chain.stationary(), rng);
    path.push(state);
    for _ in 1..length {
        state = sample_from_cumulative(chain.cumulative_row(state), rng);
        path.push(state);
    }
    path
}

/// Pick a chain by the prior and sample a `length`-token sequence from it.
pub fn sample_sequence(chain_set: &ChainSet, length: usize, rng_seed: u64) -> ContextSequence {
    let mut rng = rng_from_seed(derive_seed(rng_seed, &[PICK]));
    let n = chain_set.pick(&mut rng);
    let mut path_rng = rng_from_seed(derive_seed(rng_seed, &[PATH]));
    ContextSequence {
        tokens: sample_chain_path(chain_set.matrix(n), length, &mut path_rng),
        source_chain: Some(n),
    }
}

/// A sequence conditioned on its final token, with the number of
/// whole-sequence draws it took.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedSequence {
    pub sequence: ContextSequence,
    pub attempts: usize,
}

/// Rejection-sample a `length`-token sequence from `chain` whose last token
/// is `last_state`. Attempt `a` uses seed `derive(rng_seed, [a])`.
pub fn sample_sequence_ending_in(
    chain: &TransitionMatrix,
    last_state: usize,
    length: usize,
    rng_seed: u64,
) -> Result<ConditionedSequence, DgpError> {
    let k = chain.k();
    if last_state >= k {
        return Err(DgpError::StateOutOfRange {
            state: last_state,
            k,
        });
    }
    if length == 0 {
        return Err(DgpError::ZeroLength);
    }
    if chain.stationary()[last_state] == 0.0 && length == 1 {
        return Err(DgpError::SamplingExhausted {
            state: last_state,
            attempts: 0,
        });
    }
    for attempt in 0..MAX_REJECTION_ATTEMPTS {
        let mut rng = rng_from_seed(derive_seed(rng_seed, &[attempt as u64]));
        let tokens = sample_chain_path(chain, length, &mut rng);
        if tokens[length - 1] == last_state {
            return Ok(ConditionedSequence {
                sequence: ContextSequence {
                    tokens,
                    source_chain: None,
                },
                attempts: attempt + 1,
            });
        }
    }
    Err(DgpError::SamplingExhausted {
        state: last_state,
        attempts: MAX_REJECTION_ATTEMPTS,
    })
}
