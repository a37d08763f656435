use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{build_predictor, retrieval_index, ContextManifest, ExperimentError, ManifestEntry};
use crate::dgp::{sample_chain_set, ChainRole, ChainSet, DgpConfig};
use crate::evaluation::{expected_kl_metric, replicate_plan, ChainSource, EvalError, MetricResult};
use crate::lia::{
    default_fit_contexts, fit_lia_with, ContextMode, ConvexMixture, LiaFit, LiaOptions,
    DEFAULT_FIT_CONTEXTS, DEFAULT_FIT_CONTEXT_LENGTH,
};
use crate::predictors::{NextTokenModel, PredictError, Predictor, PredictorKind, EVEN_STATES_K};
use crate::seed::{derive_seed, tag};

const FIT: u64 = tag("lia-study-fit");
const OOD: u64 = tag("lia-study-ood");
const CONTROLS: u64 = tag("lia-study-controls");

/// Cell key prefix of fit contexts in the manifest.
pub const FIT_KEY: &str = "fit";
/// Cell key prefix of out-of-distribution evaluation contexts.
pub const OOD_KEY: &str = "ood";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiaStudySpec {
    pub k: usize,
    pub n_chains: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub n_fit_contexts: usize,
    pub fit_context_length: usize,
    pub l_eval: usize,
    pub n_rep: usize,
    pub algorithms: Vec<PredictorKind>,
    /// Append the four control predictors to the algorithm set.
    pub include_controls: bool,
    pub context_mode: ContextMode,
}

impl Default for LiaStudySpec {
    fn default() -> Self {
        Self {
            k: 10,
            n_chains: 64,
            alpha: 1.0,
            master_seed: 0,
            n_fit_contexts: DEFAULT_FIT_CONTEXTS,
            fit_context_length: DEFAULT_FIT_CONTEXT_LENGTH,
            l_eval: 400,
            n_rep: 30,
            algorithms: PredictorKind::MAIN.to_vec(),
            include_controls: false,
            context_mode: ContextMode::FinalPosition,
        }
    }
}

impl LiaStudySpec {
    fn dgp(&self) -> DgpConfig {
        DgpConfig {
            k: self.k,
            n_chains: self.n_chains,
            alpha: self.alpha,
            master_seed: self.master_seed,
            ..DgpConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.dgp()
            .validate()
            .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
        let bad = |m: &str| Err(ExperimentError::InvalidSpec(m.into()));
        if self.n_fit_contexts == 0 || self.fit_context_length == 0 {
            return bad("fit contexts must be non-empty");
        }
        if self.l_eval == 0 || self.n_rep == 0 {
            return bad("l_eval and n_rep must be >= 1");
        }
        if self.algorithms.contains(&PredictorKind::External) {
            return bad("the algorithm set holds built-in predictors only");
        }
        let even_states =
            self.include_controls || self.algorithms.contains(&PredictorKind::ControlEvenStates);
        if even_states && self.k != EVEN_STATES_K {
            return bad("the even-states control needs k = 10");
        }
        if self.algorithms.len() + if self.include_controls { 4 } else { 0 } < 2 {
            return bad("LIA needs at least 2 algorithms");
        }
        Ok(())
    }

    pub fn train_set(&self) -> Result<Arc<ChainSet>, ExperimentError> {
        Ok(Arc::new(sample_chain_set(&self.dgp(), ChainRole::Train)?))
    }

    /// The algorithm set in fit order.
    pub fn algorithm_set(&self, train: &Arc<ChainSet>) -> Result<Vec<Predictor>, ExperimentError> {
        let index = retrieval_index(train);
        let control_seed = derive_seed(self.master_seed, &[CONTROLS]);
        let mut kinds = self.algorithms.clone();
        if self.include_controls {
            kinds.extend(PredictorKind::CONTROLS);
        }
        Ok(kinds
            .into_iter()
            .map(|kind| build_predictor(kind, self.k, &index, control_seed))
            .collect::<Result<_, _>>()?)
    }

    pub fn ood_source(&self) -> ChainSource<'static> {
        ChainSource::OutOfDistribution {
            k: self.k,
            alpha: self.alpha,
        }
    }

    pub fn ood_seed(&self) -> u64 {
        derive_seed(self.master_seed, &[OOD])
    }

    fn fit_seed(&self) -> u64 {
        derive_seed(self.master_seed, &[FIT])
    }

    /// Every context the study queries: fit contexts under `fit/i`, then
    /// OOD evaluation contexts under `ood/r/i`.
    pub fn manifest(&self, train: &ChainSet) -> Result<ContextManifest, ExperimentError> {
        self.validate()?;
        let mut m = ContextManifest::new(self.k);
        let fit = default_fit_contexts(
            train,
            self.n_fit_contexts,
            self.fit_context_length,
            self.fit_seed(),
        );
        for (i, c) in fit.iter().enumerate() {
            m.push(format!("{FIT_KEY}/{i}"), c);
        }
        for rep in replicate_plan(&self.ood_source(), self.l_eval, self.n_rep, self.ood_seed())? {
            for (i, c) in rep.contexts.iter().enumerate() {
                m.push(format!("{OOD_KEY}/{}/{i}", rep.id), c);
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiaStudyReplicate {
    pub replicate: usize,
    pub predicted_kl: f64,
    pub actual_kl: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiaStudyResult {
    pub fit: LiaFit,
    pub predicted_ood_kl: MetricResult,
    /// `None` when the target does not answer the OOD contexts.
    pub actual_ood_kl: Option<MetricResult>,
    pub replicates: Vec<LiaStudyReplicate>,
}

impl LiaStudyResult {
    /// `|predicted − actual| / actual` of the replicate means.
    pub fn relative_error(&self) -> Option<f64> {
        self.actual_ood_kl
            .as_ref()
            .map(|a| (self.predicted_ood_kl.value - a.value).abs() / a.value)
    }
}

fn is_missing(e: &EvalError) -> bool {
    matches!(e, EvalError::Predict(PredictError::MissingContext(_)))
}

/// Fit LIA to `target` on the study's ID contexts and predict its OOD
/// expected KL from the fitted mixture.
pub fn run_lia_study<T: NextTokenModel + ?Sized>(
    spec: &LiaStudySpec,
    target: &T,
) -> Result<LiaStudyResult, ExperimentError> {
    spec.validate()?;
    let train = spec.train_set()?;
    let algorithms = spec.algorithm_set(&train)?;
    let manifest = spec.manifest(&train)?;
    let missing: Vec<ManifestEntry> = manifest
        .entries()
        .iter()
        .filter(|e| e.cell_key.starts_with(FIT_KEY))
        .filter(|e| {
            matches!(
                target.predict(&crate::dgp::ContextSequence::new(e.context.clone())),
                Err(PredictError::MissingContext(_))
            )
        })
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(ExperimentError::MissingContexts(missing));
    }
    let contexts = manifest.contexts(FIT_KEY);
    let options = LiaOptions {
        context_mode: spec.context_mode,
        seeds: vec![spec.master_seed, spec.fit_seed(), spec.ood_seed()],
        ..LiaOptions::default()
    };
    let fit = fit_lia_with(target, &algorithms, &contexts, &options)?;
    let mixture = ConvexMixture::from_fit(&fit, algorithms)?;
    let source = spec.ood_source();
    let predicted =
        expected_kl_metric(&mixture, &source, spec.l_eval, spec.n_rep, spec.ood_seed())?;
    let actual = match expected_kl_metric(target, &source, spec.l_eval, spec.n_rep, spec.ood_seed())
    {
        Ok(m) => Some(m),
        Err(e) if is_missing(&e) => None,
        Err(e) => return Err(e.into()),
    };
    let replicates = predicted
        .per_replicate
        .iter()
        .enumerate()
        .map(|(r, &p)| LiaStudyReplicate {
            replicate: r,
            predicted_kl: p,
            actual_kl: actual.as_ref().map(|a| a.per_replicate[r]),
        })
        .collect();
    Ok(LiaStudyResult {
        fit,
        predicted_ood_kl: predicted,
        actual_ood_kl: actual,
        replicates,
    })
}
