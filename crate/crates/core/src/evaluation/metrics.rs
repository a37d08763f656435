use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kl::{expected_kl_rows, uniform_matrix_kl, KlValue};
use super::{estimate_from_contexts, replicate, ChainSource, EvalError};
use crate::dgp::{ChainSet, TransitionMatrix};
use crate::predictors::NextTokenModel;

/// Cap on the train/random KL ratio inside the proximity score, hit only
/// when the random-set minimum is exactly zero.
pub const MAX_PROXIMITY_RATIO: f64 = 1e6;

const DEGENERATE_NORMALIZER: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMeta {
    pub predictor: String,
    pub chain_role: String,
    pub l_eval: usize,
    pub seed: u64,
    /// Entries clamped at the log floor, summed over replicates.
    pub clamp_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricResult {
    pub value: f64,
    pub stderr: f64,
    pub n_rep: usize,
    pub meta: MetricMeta,
    /// Unclipped per-replicate values, in replicate order.
    pub per_replicate: Vec<f64>,
}

impl MetricResult {
    fn from_replicates(values: Vec<f64>, clip: bool, meta: MetricMeta) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            value: if clip { mean.clamp(0.0, 1.0) } else { mean },
            stderr,
            n_rep: n,
            meta,
            per_replicate: values,
        }
    }
}

/// Baseline used to normalize bigram utilization.
#[derive(Clone, Copy, Debug)]
pub enum UtilizationNormalizer<'a> {
    /// Predict `π*` of the evaluated chain in every row.
    PerChain,
    /// Predict the prior-weighted mean stationary distribution of a set.
    Pooled(&'a ChainSet),
}

fn run_replicates<T, F>(n_rep: usize, f: F) -> Result<Vec<T>, EvalError>
where
    T: Send,
    F: Fn(usize) -> Result<T, EvalError> + Sync + Send,
{
    if n_rep == 0 {
        return Err(EvalError::InvalidArgument("n_rep must be >= 1".into()));
    }
    (0..n_rep).into_par_iter().map(f).collect()
}

/// Mean expected KL `⟨Σ_i π*_i KL(T̂_i ‖ T*_i)⟩` over replicates.
pub fn expected_kl_metric<M: NextTokenModel + ?Sized>(
    model: &M,
    source: &ChainSource<'_>,
    l_eval: usize,
    n_rep: usize,
    seed: u64,
) -> Result<MetricResult, EvalError> {
    let per_rep = run_replicates(n_rep, |r| {
        let rep = replicate(source, l_eval, seed, r)?;
        let est = estimate_from_contexts(model, &rep.contexts, r)?;
        expected_kl_rows(&est.entries, &rep.chain)
    })?;
    let clamp_count = per_rep.iter().map(|k| k.clamp_count).sum();
    Ok(MetricResult::from_replicates(
        per_rep.into_iter().map(|k| k.value).collect(),
        false,
        MetricMeta {
            predictor: model.label(),
            chain_role: source.role().to_string(),
            l_eval,
            seed,
            clamp_count,
        },
    ))
}

/// Normalized KL increase caused by shuffling each context (final token
/// held fixed), averaged over replicates and clipped to `[0, 1]`.
pub fn bigram_utilization<M: NextTokenModel + ?Sized>(
    model: &M,
    source: &ChainSource<'_>,
    l_eval: usize,
    n_rep: usize,
    seed: u64,
    normalizer: UtilizationNormalizer<'_>,
) -> Result<MetricResult, EvalError> {
    let pooled = match normalizer {
        UtilizationNormalizer::PerChain => None,
        UtilizationNormalizer::Pooled(set) => Some(pooled_stationary(set)),
    };
    let per_rep = run_replicates(n_rep, |r| {
        let rep = replicate(source, l_eval, seed, r)?;
        let est = estimate_from_contexts(model, &rep.contexts, r)?;
        let shuffled = estimate_from_contexts(model, &rep.shuffled_contexts(seed), r)?;
        let kl = expected_kl_rows(&est.entries, &rep.chain)?;
        let kl_shuffled = expected_kl_rows(&shuffled.entries, &rep.chain)?;
        let baseline = pooled
            .clone()
            .unwrap_or_else(|| rep.chain.stationary().to_vec());
        let norm = stationary_baseline_kl(&baseline, &rep.chain)?;
        if norm.value < DEGENERATE_NORMALIZER {
            return Err(EvalError::DegenerateNormalizer(norm.value));
        }
        Ok((
            (kl_shuffled.value - kl.value) / norm.value,
            kl.clamp_count + kl_shuffled.clamp_count,
        ))
    })?;
    let clamp_count = per_rep.iter().map(|v| v.1).sum();
    Ok(MetricResult::from_replicates(
        per_rep.into_iter().map(|v| v.0).collect(),
        true,
        MetricMeta {
            predictor: model.label(),
            chain_role: source.role().to_string(),
            l_eval,
            seed,
            clamp_count,
        },
    ))
}

fn pooled_stationary(set: &ChainSet) -> Vec<f64> {
    let mut out = vec![0.0; set.k()];
    for (p, m) in set.prior().iter().zip(set.matrices()) {
        out.iter_mut()
            .zip(m.stationary())
            .for_each(|(o, s)| *o += p * s);
    }
    out
}

/// `KL(T_stationary ‖ T*)` where every row of `T_stationary` is `baseline`.
fn stationary_baseline_kl(
    baseline: &[f64],
    truth: &TransitionMatrix,
) -> Result<KlValue, EvalError> {
    let rows = vec![baseline.to_vec(); truth.k()];
    expected_kl_rows(&rows, truth)
}

/// `1 − min_train KL(T ‖ T̂) / min_random KL(T ‖ T̂)` on fresh chains
/// belonging to neither set, averaged and clipped to `[0, 1]`. Matrix KLs
/// weight rows uniformly.
pub fn retrieval_proximity<M: NextTokenModel + ?Sized>(
    model: &M,
    train_set: &ChainSet,
    random_set: &ChainSet,
    l_eval: usize,
    n_rep: usize,
    seed: u64,
) -> Result<MetricResult, EvalError> {
    if train_set.len() != random_set.len() || train_set.k() != random_set.k() {
        return Err(EvalError::ShapeMismatch(format!(
            "train set has {} chains over {} states, random set {} over {}",
            train_set.len(),
            train_set.k(),
            random_set.len(),
            random_set.k()
        )));
    }
    let source = ChainSource::OutOfDistribution {
        k: train_set.k(),
        alpha: train_set.provenance().alpha,
    };
    let per_rep = run_replicates(n_rep, |r| {
        let rep = replicate(&source, l_eval, seed, r)?;
        let est = estimate_from_contexts(model, &rep.contexts, r)?;
        let (num, c1) = min_set_kl(train_set, &est.entries)?;
        let (den, c2) = min_set_kl(random_set, &est.entries)?;
        let ratio = if den > 0.0 {
            (num / den).min(MAX_PROXIMITY_RATIO)
        } else if num > 0.0 {
            MAX_PROXIMITY_RATIO
        } else {
            1.0
        };
        Ok((1.0 - ratio, c1 + c2))
    })?;
    let clamp_count = per_rep.iter().map(|v| v.1).sum();
    Ok(MetricResult::from_replicates(
        per_rep.into_iter().map(|v| v.0).collect(),
        true,
        MetricMeta {
            predictor: model.label(),
            chain_role: source.role().to_string(),
            l_eval,
            seed,
            clamp_count,
        },
    ))
}

fn min_set_kl(set: &ChainSet, estimate: &[Vec<f64>]) -> Result<(f64, usize), EvalError> {
    let mut best = f64::INFINITY;
    let mut clamps = 0;
    for m in set.matrices() {
        let rows: Vec<&[f64]> = m.rows().collect();
        let kl = uniform_matrix_kl(&rows, estimate)?;
        clamps += kl.clamp_count;
        best = best.min(kl.value);
    }
    Ok((best.max(0.0), clamps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseLabel {
    #[serde(rename = "Uni-Inf")]
    UniInf,
    #[serde(rename = "Bi-Inf")]
    BiInf,
    #[serde(rename = "Uni-Ret")]
    UniRet,
    #[serde(rename = "Bi-Ret")]
    BiRet,
}

impl PhaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::UniInf => "Uni-Inf",
            PhaseLabel::BiInf => "Bi-Inf",
            PhaseLabel::UniRet => "Uni-Ret",
            PhaseLabel::BiRet => "Bi-Ret",
        }
    }

    /// Numeric code used in tables: bit 0 is bigram, bit 1 is retrieval.
    pub fn code(self) -> u8 {
        match self {
            PhaseLabel::UniInf => 0,
            PhaseLabel::BiInf => 1,
            PhaseLabel::UniRet => 2,
            PhaseLabel::BiRet => 3,
        }
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseScore {
    pub label: PhaseLabel,
    pub utilization: f64,
    pub proximity: f64,
    /// Set when either coordinate sits exactly on the 0.5 threshold.
    pub boundary: bool,
}

/// Quadrant of `(utilization, proximity)` split at 0.5 on each axis.
///
/// A coordinate must exceed 0.5 strictly to count as "bigram" or
/// "retrieval"; ties fall to the unigram / inference side.
pub fn phase_score(utilization: &MetricResult, proximity: &MetricResult) -> PhaseScore {
    let (u, p) = (utilization.value, proximity.value);
    let bigram = u > 0.5;
    let retrieval = p > 0.5;
    let label = match (bigram, retrieval) {
        (false, false) => PhaseLabel::UniInf,
        (true, false) => PhaseLabel::BiInf,
        (false, true) => PhaseLabel::UniRet,
        (true, true) => PhaseLabel::BiRet,
    };
    PhaseScore {
        label,
        utilization: u,
        proximity: p,
        boundary: u == 0.5 || p == 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_chain_set, ChainRole, DgpConfig};
    use crate::predictors::Predictor;
    use std::sync::Arc;

    fn metric(v: f64) -> MetricResult {
        MetricResult::from_replicates(
            vec![v],
            true,
            MetricMeta {
                predictor: "x".into(),
                chain_role: "ID".into(),
                l_eval: 1,
                seed: 0,
                clamp_count: 0,
            },
        )
    }

    #[test]
    fn quadrants() {
        assert_eq!(
            phase_score(&metric(0.9), &metric(0.1)).label,
            PhaseLabel::BiInf
        );
        assert_eq!(
            phase_score(&metric(0.1), &metric(0.9)).label,
            PhaseLabel::UniRet
        );
        assert_eq!(
            phase_score(&metric(0.9), &metric(0.9)).label,
            PhaseLabel::BiRet
        );
        assert_eq!(
            phase_score(&metric(0.1), &metric(0.1)).label,
            PhaseLabel::UniInf
        );
        let tie = phase_score(&metric(0.5), &metric(0.5));
        assert_eq!(tie.label, PhaseLabel::UniInf);
        assert!(tie.boundary);
        assert!(!phase_score(&metric(0.9), &metric(0.1)).boundary);
    }

    #[test]
    fn stderr_uses_sample_variance() {
        let m = MetricResult::from_replicates(vec![1.0, 2.0, 3.0], false, metric(0.0).meta);
        assert!((m.value - 2.0).abs() < 1e-15);
        assert!((m.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let clipped = MetricResult::from_replicates(vec![1.5, 2.0], true, metric(0.0).meta);
        assert_eq!(clipped.value, 1.0);
    }

    fn sets(n: usize) -> (Arc<ChainSet>, Arc<ChainSet>) {
        let cfg = DgpConfig {
            k: 5,
            n_chains: n,
            master_seed: 3,
            ..DgpConfig::default()
        };
        (
            Arc::new(sample_chain_set(&cfg, ChainRole::Train).unwrap()),
            Arc::new(sample_chain_set(&cfg, ChainRole::Random).unwrap()),
        )
    }

    #[test]
    fn uni_inf_has_zero_utilization_numerator() {
        let (train, _) = sets(4);
        let p = Predictor::UniInf { k: 5 };
        let m = bigram_utilization(
            &p,
            &ChainSource::InDistribution(&train),
            60,
            4,
            1,
            UtilizationNormalizer::PerChain,
        )
        .unwrap();
        assert!(m.per_replicate.iter().all(|v| *v == 0.0));
        assert_eq!(m.value, 0.0);
    }

    #[test]
    fn frozen_stationary_has_zero_utilization() {
        let controls = crate::predictors::control_set(10, 2).unwrap();
        let cfg = DgpConfig {
            k: 10,
            n_chains: 2,
            ..DgpConfig::default()
        };
        let set10 = sample_chain_set(&cfg, ChainRole::Train).unwrap();
        let m = bigram_utilization(
            &controls[1],
            &ChainSource::InDistribution(&set10),
            50,
            3,
            1,
            UtilizationNormalizer::Pooled(&set10),
        )
        .unwrap();
        assert_eq!(m.value, 0.0);
    }

    #[test]
    fn identical_sets_give_zero_proximity() {
        let (train, _) = sets(4);
        let p = Predictor::BiInf { k: 5 };
        let m = retrieval_proximity(&p, &train, &train, 50, 4, 2).unwrap();
        assert!(m.per_replicate.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(m.value, 0.0);
    }

    #[test]
    fn exact_train_member_gives_unit_proximity() {
        let (train, random) = sets(4);
        let frozen = Predictor::ControlFrozenMatrix(Arc::new(train.matrix(2).clone()));
        let m = retrieval_proximity(&frozen, &train, &random, 50, 3, 2).unwrap();
        assert_eq!(m.value, 1.0);
    }

    #[test]
    fn proximity_requires_matching_sets() {
        let (train, _) = sets(4);
        let (_, random) = sets(3);
        assert!(matches!(
            retrieval_proximity(&Predictor::BiInf { k: 5 }, &train, &random, 10, 1, 0),
            Err(EvalError::ShapeMismatch(_))
        ));
    }
}
