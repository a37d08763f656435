//! Bayesian averaging over a finite chain set.
//!
//! The posterior weight of chain `n` given context `x_1..x_t` is
//! `p_n · L(T_n | x)`, where the unigram likelihood is `Π_j π_n[x_j]` and
//! the bigram likelihood is `Π_{j≥2} T_n[x_{j−1}, x_j]` over the `t − 1`
//! observed transitions. The prediction averages each chain's emission
//! (`T_n[x_t, ·]`, or `π_n` for the stationary-emission variants) under
//! that posterior.
//!
//! Likelihoods are evaluated from unigram/bigram counts against cached
//! log-probabilities and normalized with log-sum-exp.

use std::sync::Arc;

use super::PredictError;
use crate::dgp::{ChainSet, ContextSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Likelihood {
    Unigram,
    Bigram,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Emission {
    /// Row `x_t` of the chain's transition matrix.
    Transition,
    /// The chain's stationary distribution.
    Stationary,
}

/// A chain set with cached log-probabilities.
#[derive(Debug)]
pub struct RetrievalIndex {
    chains: Arc<ChainSet>,
    log_prior: Vec<f64>,
    /// `N x k x k`
    log_transitions: Vec<f64>,
    /// `N x k`
    log_stationary: Vec<f64>,
}

impl RetrievalIndex {
    pub fn new(chains: Arc<ChainSet>) -> Self {
        let log_prior = chains.prior().iter().map(|p| p.ln()).collect();
        let log_transitions = chains
            .matrices()
            .iter()
            .flat_map(|m| m.entries().iter().map(|v| v.ln()))
            .collect();
        let log_stationary = chains
            .matrices()
            .iter()
            .flat_map(|m| m.stationary().iter().map(|v| v.ln()))
            .collect();
        Self {
            chains,
            log_prior,
            log_transitions,
            log_stationary,
        }
    }

    pub fn chains(&self) -> &Arc<ChainSet> {
        &self.chains
    }

    pub fn k(&self) -> usize {
        self.chains.k()
    }

    /// Per-chain log-likelihood of `tokens` (prior excluded).
    pub fn log_likelihoods(&self, tokens: &[usize], likelihood: Likelihood) -> Vec<f64> {
        let k = self.k();
        let n_chains = self.chains.len();
        match likelihood {
            Likelihood::Unigram => {
                let mut counts = vec![0usize; k];
                tokens.iter().for_each(|&s| counts[s] += 1);
                (0..n_chains)
                    .map(|n| weighted_log_sum(&counts, &self.log_stationary[n * k..(n + 1) * k]))
                    .collect()
            }
            Likelihood::Bigram => {
                let mut counts = vec![0usize; k * k];
                tokens.windows(2).for_each(|w| counts[w[0] * k + w[1]] += 1);
                (0..n_chains)
                    .map(|n| {
                        weighted_log_sum(&counts, &self.log_transitions[n * k * k..(n + 1) * k * k])
                    })
                    .collect()
            }
        }
    }

    /// Normalized posterior over chains.
    pub fn posterior(&self, tokens: &[usize], likelihood: Likelihood) -> Vec<f64> {
        let log_post: Vec<f64> = self
            .log_likelihoods(tokens, likelihood)
            .iter()
            .zip(&self.log_prior)
            .map(|(l, p)| l + p)
            .collect();
        let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            // every chain assigns the context zero probability; fall back to the prior
            return self.chains.prior().to_vec();
        }
        let weights: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }

    /// Posterior-averaged emission.
    pub fn predict(
        &self,
        context: &ContextSequence,
        likelihood: Likelihood,
        emission: Emission,
    ) -> Result<Vec<f64>, PredictError> {
        let last = context.last().ok_or(PredictError::EmptyContext)?;
        let weights = self.posterior(&context.tokens, likelihood);
        let k = self.k();
        let mut out = vec![0.0; k];
        for (w, m) in weights.iter().zip(self.chains.matrices()) {
            if *w == 0.0 {
                continue;
            }
            let source = match emission {
                Emission::Transition => m.row(last),
                Emission::Stationary => m.stationary(),
            };
            out.iter_mut().zip(source).for_each(|(o, s)| *o += w * s);
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|o| *o /= total);
        Ok(out)
    }
}

fn weighted_log_sum(counts: &[usize], logs: &[f64]) -> f64 {
    counts
        .iter()
        .zip(logs)
        .filter(|(c, _)| **c > 0)
        .map(|(&c, &l)| c as f64 * l)
        .sum()
}

/// Posterior weights over the chains of `index` given `context`.
pub fn retrieval_posterior(
    index: &RetrievalIndex,
    context: &ContextSequence,
    likelihood: Likelihood,
) -> Vec<f64> {
    index.posterior(&context.tokens, likelihood)
}

pub fn uni_ret_predict(
    index: &RetrievalIndex,
    context: &ContextSequence,
) -> Result<Vec<f64>, PredictError> {
    index.predict(context, Likelihood::Unigram, Emission::Transition)
}

pub fn bi_ret_predict(
    index: &RetrievalIndex,
    context: &ContextSequence,
) -> Result<Vec<f64>, PredictError> {
    index.predict(context, Likelihood::Bigram, Emission::Transition)
}

pub fn uni_ret_up_predict(
    index: &RetrievalIndex,
    context: &ContextSequence,
) -> Result<Vec<f64>, PredictError> {
    index.predict(context, Likelihood::Unigram, Emission::Stationary)
}

pub fn bi_ret_up_predict(
    index: &RetrievalIndex,
    context: &ContextSequence,
) -> Result<Vec<f64>, PredictError> {
    index.predict(context, Likelihood::Bigram, Emission::Stationary)
}
