//! Command configs: a TOML file merged with command-line overrides.
//!
//! Every config key has a kebab-case flag of the same name.

use std::fs;
use std::path::{Path, PathBuf};

use mixlab::dgp::{ChainRole, DgpConfig};
use mixlab::experiments::{
    config_hash, EvalRole, HighDimSpec, LiaStudySpec, SweepMetric, SweepSpec,
};
use mixlab::lia::ContextMode;
use mixlab::predictors::PredictorKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub fn parse_kind(s: &str) -> Result<PredictorKind, String> {
    s.parse()
        .map_err(|e: mixlab::predictors::PredictError| e.to_string())
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))
}

/// Configs whose randomness flows from one master seed.
pub trait Seeded: Serialize {
    fn seed_slot(&mut self) -> &mut Option<u64>;

    /// The explicit seed, or one derived from the hash of the seedless
    /// config. The choice is reported on stderr.
    fn resolve_seed(&mut self) -> u64 {
        if let Some(seed) = *self.seed_slot() {
            return seed;
        }
        let hash = config_hash(self);
        let seed = u64::from_str_radix(&hash, 16).expect("hash is hex");
        eprintln!("seed {seed} (derived from config hash {hash})");
        *self.seed_slot() = Some(seed);
        seed
    }
}

macro_rules! seeded {
    ($($t:ty),*) => {
        $(impl Seeded for $t {
            fn seed_slot(&mut self) -> &mut Option<u64> {
                &mut self.seed
            }
        })*
    };
}

seeded!(
    GenerateConfig,
    EvalConfig,
    SweepConfig,
    HighDimConfig,
    LiaConfig,
    AnswerConfig
);

fn override_with<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub k: usize,
    pub n_chains: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
    pub role: ChainRole,
    /// Number of sequences to sample from the set; 0 writes none.
    pub emit_sequences: usize,
    /// Length of each emitted sequence.
    pub l: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let d = DgpConfig::default();
        Self {
            k: d.k,
            n_chains: d.n_chains,
            alpha: d.alpha,
            seed: None,
            role: ChainRole::Train,
            emit_sequences: 0,
            l: d.l,
        }
    }
}

impl GenerateConfig {
    pub fn dgp(&self) -> DgpConfig {
        DgpConfig {
            k: self.k,
            l: self.l,
            n_chains: self.n_chains,
            alpha: self.alpha,
            master_seed: self.seed.unwrap_or_default(),
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.dgp().validate().map_err(Failure::invalid)
    }
}

#[derive(Clone, Debug, Default, clap::Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_chains: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub role: Option<ChainRole>,
    #[arg(long)]
    pub emit_sequences: Option<usize>,
    #[arg(long)]
    pub l: Option<usize>,
}

impl GenerateArgs {
    pub fn apply(self, c: &mut GenerateConfig) {
        override_with(&mut c.k, self.k);
        override_with(&mut c.n_chains, self.n_chains);
        override_with(&mut c.alpha, self.alpha);
        override_with(&mut c.role, self.role);
        override_with(&mut c.emit_sequences, self.emit_sequences);
        override_with(&mut c.l, self.l);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub n_chains: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
    pub l_eval: usize,
    pub n_rep: usize,
    pub predictors: Vec<PredictorKind>,
    /// Prediction tables evaluated next to the built-in predictors.
    pub tables: Vec<PathBuf>,
    pub step: String,
    pub metrics: Vec<SweepMetric>,
    pub chain_roles: Vec<EvalRole>,
    pub pooled_normalizer: bool,
    /// Also report every predictor's output on the empty context.
    pub probe_empty: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let s = SweepSpec::default();
        Self {
            k: 10,
            n_chains: 64,
            alpha: s.alpha,
            seed: None,
            l_eval: 400,
            n_rep: s.n_rep,
            predictors: s.predictors,
            tables: Vec::new(),
            step: String::new(),
            metrics: s.metrics,
            chain_roles: s.chain_roles,
            pooled_normalizer: false,
            probe_empty: false,
        }
    }
}

impl EvalConfig {
    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            k: vec![self.k],
            n_chains: vec![self.n_chains],
            l_eval: vec![self.l_eval],
            alpha: self.alpha,
            seed: self.seed,
            n_rep: self.n_rep,
            predictors: self.predictors.clone(),
            tables: self.tables.clone(),
            step: self.step.clone(),
            metrics: self.metrics.clone(),
            chain_roles: self.chain_roles.clone(),
            pooled_normalizer: self.pooled_normalizer,
        }
    }
}

#[derive(Clone, Debug, Default, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_chains: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub l_eval: Option<usize>,
    #[arg(long)]
    pub n_rep: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub predictors: Option<Vec<PredictorKind>>,
    #[arg(long, value_delimiter = ',')]
    pub tables: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub step: Option<String>,
    #[arg(long)]
    pub probe_empty: bool,
}

impl EvalArgs {
    pub fn apply(self, c: &mut EvalConfig) {
        override_with(&mut c.k, self.k);
        override_with(&mut c.n_chains, self.n_chains);
        override_with(&mut c.alpha, self.alpha);
        override_with(&mut c.l_eval, self.l_eval);
        override_with(&mut c.n_rep, self.n_rep);
        override_with(&mut c.predictors, self.predictors);
        override_with(&mut c.tables, self.tables);
        override_with(&mut c.step, self.step);
        c.probe_empty |= self.probe_empty;
    }
}

/// Grid axes are lists; `k`, `n_chains` and `l_eval` name the axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k: Vec<usize>,
    pub n_chains: Vec<usize>,
    pub l_eval: Vec<usize>,
    pub alpha: f64,
    pub seed: Option<u64>,
    pub n_rep: usize,
    pub predictors: Vec<PredictorKind>,
    pub tables: Vec<PathBuf>,
    /// Step label shared by every table.
    pub step: String,
    pub metrics: Vec<SweepMetric>,
    pub chain_roles: Vec<EvalRole>,
    pub pooled_normalizer: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let s = SweepSpec::default();
        Self {
            k: s.k_values,
            n_chains: s.n_values,
            l_eval: s.l_eval_values,
            alpha: s.alpha,
            seed: None,
            n_rep: s.n_rep,
            predictors: s.predictors,
            tables: Vec::new(),
            step: String::new(),
            metrics: s.metrics,
            chain_roles: s.chain_roles,
            pooled_normalizer: s.pooled_normalizer,
        }
    }
}

impl SweepConfig {
    pub fn spec(&self) -> SweepSpec {
        SweepSpec {
            n_values: self.n_chains.clone(),
            k_values: self.k.clone(),
            l_eval_values: self.l_eval.clone(),
            predictors: self.predictors.clone(),
            tables: self
                .tables
                .iter()
                .map(|path| mixlab::experiments::ExternalTableSpec {
                    path: path.clone(),
                    step: self.step.clone(),
                })
                .collect(),
            chain_roles: self.chain_roles.clone(),
            metrics: self.metrics.clone(),
            n_rep: self.n_rep,
            master_seed: self.seed.unwrap_or_default(),
            alpha: self.alpha,
            pooled_normalizer: self.pooled_normalizer,
            output: None,
        }
    }
}

#[derive(Clone, Debug, Default, clap::Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub n_chains: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub l_eval: Option<Vec<usize>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_rep: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub predictors: Option<Vec<PredictorKind>>,
    #[arg(long, value_delimiter = ',')]
    pub tables: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub step: Option<String>,
}

impl SweepArgs {
    pub fn apply(self, c: &mut SweepConfig) {
        override_with(&mut c.k, self.k);
        override_with(&mut c.n_chains, self.n_chains);
        override_with(&mut c.l_eval, self.l_eval);
        override_with(&mut c.alpha, self.alpha);
        override_with(&mut c.n_rep, self.n_rep);
        override_with(&mut c.predictors, self.predictors);
        override_with(&mut c.tables, self.tables);
        override_with(&mut c.step, self.step);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighDimConfig {
    pub k: Vec<usize>,
    pub n_chains: Vec<usize>,
    pub n_seeds: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
}

impl Default for HighDimConfig {
    fn default() -> Self {
        let s = HighDimSpec::default();
        Self {
            k: s.k_values,
            n_chains: s.n_values,
            n_seeds: s.n_seeds,
            alpha: s.alpha,
            seed: None,
        }
    }
}

impl HighDimConfig {
    pub fn spec(&self) -> HighDimSpec {
        HighDimSpec {
            k_values: self.k.clone(),
            n_values: self.n_chains.clone(),
            n_seeds: self.n_seeds,
            alpha: self.alpha,
            master_seed: self.seed.unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, Default, clap::Args)]
pub struct HighDimArgs {
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub n_chains: Option<Vec<usize>>,
    #[arg(long)]
    pub n_seeds: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl HighDimArgs {
    pub fn apply(self, c: &mut HighDimConfig) {
        override_with(&mut c.k, self.k);
        override_with(&mut c.n_chains, self.n_chains);
        override_with(&mut c.n_seeds, self.n_seeds);
        override_with(&mut c.alpha, self.alpha);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiaConfig {
    pub k: usize,
    pub n_chains: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
    pub l_eval: usize,
    pub n_rep: usize,
    pub fit_contexts: usize,
    pub fit_length: usize,
    /// The algorithm set.
    pub predictors: Vec<PredictorKind>,
    pub include_controls: bool,
    pub context_mode: ContextMode,
    /// Prediction table of the model being fitted.
    pub target: Option<PathBuf>,
    /// Fit a built-in predictor instead of a table.
    pub target_predictor: Option<PredictorKind>,
}

impl Default for LiaConfig {
    fn default() -> Self {
        let s = LiaStudySpec::default();
        Self {
            k: s.k,
            n_chains: s.n_chains,
            alpha: s.alpha,
            seed: None,
            l_eval: s.l_eval,
            n_rep: s.n_rep,
            fit_contexts: s.n_fit_contexts,
            fit_length: s.fit_context_length,
            predictors: s.algorithms,
            include_controls: s.include_controls,
            context_mode: s.context_mode,
            target: None,
            target_predictor: None,
        }
    }
}

impl LiaConfig {
    pub fn spec(&self) -> LiaStudySpec {
        LiaStudySpec {
            k: self.k,
            n_chains: self.n_chains,
            alpha: self.alpha,
            master_seed: self.seed.unwrap_or_default(),
            n_fit_contexts: self.fit_contexts,
            fit_context_length: self.fit_length,
            l_eval: self.l_eval,
            n_rep: self.n_rep,
            algorithms: self.predictors.clone(),
            include_controls: self.include_controls,
            context_mode: self.context_mode,
        }
    }
}

#[derive(Clone, Debug, Default, clap::Args)]
pub struct LiaArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_chains: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub l_eval: Option<usize>,
    #[arg(long)]
    pub n_rep: Option<usize>,
    #[arg(long)]
    pub fit_contexts: Option<usize>,
    #[arg(long)]
    pub fit_length: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub predictors: Option<Vec<PredictorKind>>,
    #[arg(long)]
    pub include_controls: bool,
    #[arg(long, value_enum)]
    pub context_mode: Option<ContextModeArg>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    pub target_predictor: Option<PredictorKind>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ContextModeArg {
    FinalPosition,
    PerPosition,
}

impl LiaArgs {
    pub fn apply(self, c: &mut LiaConfig) {
        override_with(&mut c.k, self.k);
        override_with(&mut c.n_chains, self.n_chains);
        override_with(&mut c.alpha, self.alpha);
        override_with(&mut c.l_eval, self.l_eval);
        override_with(&mut c.n_rep, self.n_rep);
        override_with(&mut c.fit_contexts, self.fit_contexts);
        override_with(&mut c.fit_length, self.fit_length);
        override_with(&mut c.predictors, self.predictors);
        c.include_controls |= self.include_controls;
        override_with(
            &mut c.context_mode,
            self.context_mode.map(|m| match m {
                ContextModeArg::FinalPosition => ContextMode::FinalPosition,
                ContextModeArg::PerPosition => ContextMode::PerPosition,
            }),
        );
        if self.target.is_some() {
            c.target = self.target;
        }
        if self.target_predictor.is_some() {
            c.target_predictor = self.target_predictor;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerConfig {
    pub manifest: Option<PathBuf>,
    pub predictor: Option<PredictorKind>,
    /// Chain-set parameters for retrieval predictors.
    pub k: usize,
    pub n_chains: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
}

impl Default for AnswerConfig {
    fn default() -> Self {
        let d = DgpConfig::default();
        Self {
            manifest: None,
            predictor: None,
            k: d.k,
            n_chains: d.n_chains,
            alpha: d.alpha,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, clap::Args)]
pub struct AnswerArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    pub predictor: Option<PredictorKind>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_chains: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl AnswerArgs {
    pub fn apply(self, c: &mut AnswerConfig) {
        if self.manifest.is_some() {
            c.manifest = self.manifest;
        }
        if self.predictor.is_some() {
            c.predictor = self.predictor;
        }
        override_with(&mut c.k, self.k);
        override_with(&mut c.n_chains, self.n_chains);
        override_with(&mut c.alpha, self.alpha);
    }
}
