//! Linear interpolation of algorithms.
//!
//! A target predictor is approximated on a set of contexts by the convex
//! combination of reference predictors that minimises the mean squared
//! difference over every entry of every queried probability vector.

mod solver;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::{sample_sequence, ChainSet, ContextSequence};
use crate::evaluation::row_kl;
use crate::predictors::{
    validate_probability_vector, NextTokenModel, PredictError, PROBABILITY_SUM_TOLERANCE,
};
use crate::seed::{derive_seed, tag};

pub use solver::{
    objective, project_to_simplex, solve_simplex_lsq, Solution, SolverOptions,
    MAX_ENUMERATED_COLUMNS,
};

pub const LIA_FORMAT_VERSION: u32 = 1;
/// Residuals are averaged over individual probability entries.
pub const RESIDUAL_CONVENTION: &str = "mean_per_entry";
pub const DEFAULT_FIT_CONTEXTS: usize = 300;
pub const DEFAULT_FIT_CONTEXT_LENGTH: usize = 400;
/// Columns closer than this everywhere are treated as identical.
pub const IDENTICAL_COLUMN_TOLERANCE: f64 = 1e-14;

const FIT_CONTEXT: u64 = tag("lia-context");

#[derive(Debug, Error)]
pub enum LiaError {
    #[error("LIA needs at least 2 algorithms (got {0})")]
    TooFewAlgorithms(usize),
    #[error("LIA needs at least one context")]
    NoContexts,
    #[error("algorithm set does not match the fit: expected {expected:?}, got {got:?}")]
    KindMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("predictors disagree on k: {0}")]
    StateCountMismatch(String),
    #[error("invalid fit: {0}")]
    InvalidFit(String),
    #[error("unsupported fit format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which positions of each context are queried.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// One query per context, after its last token.
    #[default]
    FinalPosition,
    /// One query after every non-empty prefix.
    PerPosition,
}

impl ContextMode {
    fn queries(self, contexts: &[ContextSequence]) -> Vec<ContextSequence> {
        match self {
            ContextMode::FinalPosition => contexts.to_vec(),
            ContextMode::PerPosition => contexts
                .iter()
                .flat_map(|c| {
                    (1..=c.len()).map(move |t| ContextSequence {
                        tokens: c.tokens[..t].to_vec(),
                        source_chain: c.source_chain,
                    })
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LiaOptions {
    pub context_mode: ContextMode,
    pub solver: SolverOptions,
    /// Seeds that produced the fit contexts, recorded verbatim.
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiaFit {
    pub format_version: u32,
    pub target: String,
    /// Labels of the algorithm set, in weight order.
    pub predictor_kinds: Vec<String>,
    pub weights: Vec<f64>,
    pub residual_l2: f64,
    pub residual_convention: String,
    pub n_contexts: usize,
    pub n_queries: usize,
    pub context_mode: ContextMode,
    pub solver_iterations: usize,
    /// Groups of algorithms whose outputs coincided on every query. Their
    /// mass is split equally.
    #[serde(default)]
    pub degenerate_groups: Vec<Vec<usize>>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl LiaFit {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_groups.is_empty()
    }

    pub fn weight_of(&self, label: &str) -> Option<f64> {
        self.predictor_kinds
            .iter()
            .position(|k| k == label)
            .map(|i| self.weights[i])
    }

    pub fn validate(&self) -> Result<(), LiaError> {
        if self.format_version != LIA_FORMAT_VERSION {
            return Err(LiaError::UnsupportedVersion(self.format_version));
        }
        if self.weights.len() != self.predictor_kinds.len() {
            return Err(LiaError::InvalidFit(format!(
                "{} weights for {} predictors",
                self.weights.len(),
                self.predictor_kinds.len()
            )));
        }
        validate_probability_vector(&self.weights, self.weights.len(), 1e-9)
            .map_err(|e| LiaError::InvalidFit(e.to_string()))?;
        if self.residual_l2.is_nan() || self.residual_l2 < 0.0 {
            return Err(LiaError::InvalidFit(format!(
                "residual {} < 0",
                self.residual_l2
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, LiaError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, LiaError> {
        let fit: LiaFit = serde_json::from_str(text)?;
        fit.validate()?;
        Ok(fit)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LiaError> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LiaError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// A fixed convex combination of models.
#[derive(Clone, Debug)]
pub struct ConvexMixture<A> {
    weights: Vec<f64>,
    models: Vec<A>,
    label: String,
}

impl<A: NextTokenModel> ConvexMixture<A> {
    pub fn new(
        weights: Vec<f64>,
        models: Vec<A>,
        label: impl Into<String>,
    ) -> Result<Self, LiaError> {
        if weights.len() != models.len() || models.is_empty() {
            return Err(LiaError::InvalidFit(format!(
                "{} weights for {} models",
                weights.len(),
                models.len()
            )));
        }
        validate_probability_vector(&weights, weights.len(), 1e-9)
            .map_err(|e| LiaError::InvalidFit(e.to_string()))?;
        Ok(Self {
            weights,
            models,
            label: label.into(),
        })
    }

    /// The mixture a fit describes over `algorithms`.
    pub fn from_fit(fit: &LiaFit, algorithms: Vec<A>) -> Result<Self, LiaError> {
        check_kinds(fit, &algorithms)?;
        Self::new(
            fit.weights.clone(),
            algorithms,
            format!("lia:{}", fit.target),
        )
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn models(&self) -> &[A] {
        &self.models
    }
}

impl<A: NextTokenModel> NextTokenModel for ConvexMixture<A> {
    fn predict(&self, context: &ContextSequence) -> Result<Vec<f64>, PredictError> {
        combine(&self.weights, &self.models, context)
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

fn combine<A: NextTokenModel>(
    weights: &[f64],
    models: &[A],
    context: &ContextSequence,
) -> Result<Vec<f64>, PredictError> {
    let mut out: Option<Vec<f64>> = None;
    for (w, m) in weights.iter().zip(models) {
        if *w == 0.0 && out.is_some() {
            continue;
        }
        let p = m.predict(context)?;
        match out.as_mut() {
            None => out = Some(p.iter().map(|x| w * x).collect()),
            Some(acc) => {
                if acc.len() != p.len() {
                    return Err(PredictError::InvalidProbabilityVector(format!(
                        "mixture members disagree on length ({} vs {})",
                        acc.len(),
                        p.len()
                    )));
                }
                acc.iter_mut().zip(&p).for_each(|(a, x)| *a += w * x);
            }
        }
    }
    let out = out.unwrap_or_default();
    validate_probability_vector(&out, out.len(), PROBABILITY_SUM_TOLERANCE)?;
    Ok(out)
}

fn labels<A: NextTokenModel>(algorithms: &[A]) -> Vec<String> {
    algorithms.iter().map(NextTokenModel::label).collect()
}

fn check_kinds<A: NextTokenModel>(fit: &LiaFit, algorithms: &[A]) -> Result<(), LiaError> {
    let got = labels(algorithms);
    if got != fit.predictor_kinds {
        return Err(LiaError::KindMismatch {
            expected: fit.predictor_kinds.clone(),
            got,
        });
    }
    Ok(())
}

/// `Σ_a w_a p_a(context)` for the fitted weights.
pub fn lia_predict<A: NextTokenModel>(
    fit: &LiaFit,
    algorithms: &[A],
    context: &ContextSequence,
) -> Result<Vec<f64>, LiaError> {
    check_kinds(fit, algorithms)?;
    Ok(combine(&fit.weights, algorithms, context)?)
}

/// Target and algorithm outputs on every query, stacked entry by entry.
struct Design {
    target: Vec<f64>,
    columns: Vec<Vec<f64>>,
}

fn design<T, A>(
    target: &T,
    algorithms: &[A],
    queries: &[ContextSequence],
) -> Result<Design, LiaError>
where
    T: NextTokenModel + ?Sized,
    A: NextTokenModel,
{
    let rows = queries
        .par_iter()
        .map(|q| {
            let t = target.predict(q)?;
            let a = algorithms
                .iter()
                .map(|alg| alg.predict(q))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((t, a))
        })
        .collect::<Result<Vec<_>, PredictError>>()?;
    let k = rows.first().map_or(0, |r| r.0.len());
    let mut out = Design {
        target: Vec::with_capacity(rows.len() * k),
        columns: vec![Vec::with_capacity(rows.len() * k); algorithms.len()],
    };
    for (t, a) in rows {
        if t.len() != k || a.iter().any(|p| p.len() != k) {
            return Err(LiaError::StateCountMismatch(format!(
                "expected vectors of length {k} from every predictor"
            )));
        }
        out.target.extend(t);
        for (col, p) in out.columns.iter_mut().zip(a) {
            col.extend(p);
        }
    }
    Ok(out)
}

/// Group indices of columns that agree within [`IDENTICAL_COLUMN_TOLERANCE`].
fn identical_groups(columns: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    'outer: for (j, col) in columns.iter().enumerate() {
        for g in groups.iter_mut() {
            let rep = &columns[g[0]];
            if rep
                .iter()
                .zip(col)
                .all(|(a, b)| (a - b).abs() <= IDENTICAL_COLUMN_TOLERANCE)
            {
                g.push(j);
                continue 'outer;
            }
        }
        groups.push(vec![j]);
    }
    groups
}

/// Fit with default options (final-position queries).
pub fn fit_lia<T, A>(
    target: &T,
    algorithms: &[A],
    contexts: &[ContextSequence],
) -> Result<LiaFit, LiaError>
where
    T: NextTokenModel + ?Sized,
    A: NextTokenModel,
{
    fit_lia_with(target, algorithms, contexts, &LiaOptions::default())
}

pub fn fit_lia_with<T, A>(
    target: &T,
    algorithms: &[A],
    contexts: &[ContextSequence],
    options: &LiaOptions,
) -> Result<LiaFit, LiaError>
where
    T: NextTokenModel + ?Sized,
    A: NextTokenModel,
{
    if algorithms.len() < 2 {
        return Err(LiaError::TooFewAlgorithms(algorithms.len()));
    }
    if contexts.is_empty() {
        return Err(LiaError::NoContexts);
    }
    let queries = options.context_mode.queries(contexts);
    if queries.is_empty() {
        return Err(LiaError::NoContexts);
    }
    let d = design(target, algorithms, &queries)?;
    let groups = identical_groups(&d.columns);
    let unique: Vec<Vec<f64>> = groups.iter().map(|g| d.columns[g[0]].clone()).collect();
    let (group_weights, iterations) = if unique.len() == 1 {
        (vec![1.0], 0)
    } else {
        let s = solve_simplex_lsq(&unique, &d.target, &options.solver);
        (s.weights, s.iterations)
    };
    let mut weights = vec![0.0; algorithms.len()];
    for (g, w) in groups.iter().zip(&group_weights) {
        for &j in g {
            weights[j] = w / g.len() as f64;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(LiaFit {
        format_version: LIA_FORMAT_VERSION,
        target: target.label(),
        predictor_kinds: labels(algorithms),
        residual_l2: objective(&d.columns, &d.target, &weights),
        weights,
        residual_convention: RESIDUAL_CONVENTION.to_string(),
        n_contexts: contexts.len(),
        n_queries: queries.len(),
        context_mode: options.context_mode,
        solver_iterations: iterations,
        degenerate_groups: groups.into_iter().filter(|g| g.len() > 1).collect(),
        seeds: options.seeds.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitQualityReport {
    pub n_contexts: usize,
    pub fit_residual_l2: f64,
    pub heldout_residual_l2: f64,
    /// Mean over queries of `KL(target ‖ LIA)`.
    pub kl_target_lia: f64,
    /// Mean over queries of `KL(LIA ‖ target)`.
    pub kl_lia_target: f64,
}

/// Residual and KLs of a fit on contexts it was not fitted on.
pub fn fit_quality_report<T, A>(
    fit: &LiaFit,
    target: &T,
    algorithms: &[A],
    heldout: &[ContextSequence],
) -> Result<FitQualityReport, LiaError>
where
    T: NextTokenModel + ?Sized,
    A: NextTokenModel,
{
    check_kinds(fit, algorithms)?;
    if heldout.is_empty() {
        return Err(LiaError::NoContexts);
    }
    let queries = fit.context_mode.queries(heldout);
    let d = design(target, algorithms, &queries)?;
    let k = d.target.len() / queries.len();
    let mut mixed = vec![0.0; d.target.len()];
    for (col, w) in d.columns.iter().zip(&fit.weights) {
        mixed.iter_mut().zip(col).for_each(|(m, c)| *m += w * c);
    }
    let (mut forward, mut backward) = (0.0, 0.0);
    for (t, l) in d.target.chunks(k).zip(mixed.chunks(k)) {
        forward += row_kl(t, l).value;
        backward += row_kl(l, t).value;
    }
    let n = queries.len() as f64;
    Ok(FitQualityReport {
        n_contexts: heldout.len(),
        fit_residual_l2: fit.residual_l2,
        heldout_residual_l2: objective(&d.columns, &d.target, &fit.weights),
        kl_target_lia: forward / n,
        kl_lia_target: backward / n,
    })
}

/// `n` contexts of length `length`, each from an independently picked
/// training chain. Context `i` uses `derive(seed, [lia-context, i])`.
pub fn default_fit_contexts(
    chain_set: &ChainSet,
    n: usize,
    length: usize,
    seed: u64,
) -> Vec<ContextSequence> {
    (0..n)
        .map(|i| {
            sample_sequence(
                chain_set,
                length,
                derive_seed(seed, &[FIT_CONTEXT, i as u64]),
            )
        })
        .collect()
}
