use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_predictor, config_hash, retrieval_index, write_atomic, ContextManifest, ExperimentError,
};
use crate::dgp::{sample_chain_set, ChainRole, ChainSet, DgpConfig};
use crate::evaluation::{
    bigram_utilization, expected_kl_metric, phase_score, read_metric_rows, replicate_plan,
    retrieval_proximity, write_metric_rows, ChainSource, EvalError, MetricResult, MetricRow,
    UtilizationNormalizer,
};
use crate::predictors::{PredictionTable, Predictor, PredictorKind};
use crate::seed::{derive_seed, tag};

const EVAL: u64 = tag("sweep-eval");
const CONTROLS: u64 = tag("sweep-controls");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvalRole {
    #[serde(rename = "ID", alias = "id")]
    Id,
    #[serde(rename = "OOD", alias = "ood")]
    Ood,
}

impl EvalRole {
    /// The `chain_role` column value.
    pub fn as_str(self) -> &'static str {
        match self {
            EvalRole::Id => "ID",
            EvalRole::Ood => "OOD",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    ExpectedKl,
    BigramUtilization,
    RetrievalProximity,
    PhaseScore,
}

impl SweepMetric {
    pub const ALL: [SweepMetric; 4] = [
        SweepMetric::ExpectedKl,
        SweepMetric::BigramUtilization,
        SweepMetric::RetrievalProximity,
        SweepMetric::PhaseScore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepMetric::ExpectedKl => "expected_kl",
            SweepMetric::BigramUtilization => "bigram_utilization",
            SweepMetric::RetrievalProximity => "retrieval_proximity",
            SweepMetric::PhaseScore => "phase_score",
        }
    }
}

/// A recorded prediction table evaluated alongside the built-in predictors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalTableSpec {
    pub path: PathBuf,
    /// Written to the `step` column, e.g. a training checkpoint.
    #[serde(default)]
    pub step: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub l_eval_values: Vec<usize>,
    pub predictors: Vec<PredictorKind>,
    pub tables: Vec<ExternalTableSpec>,
    pub chain_roles: Vec<EvalRole>,
    pub metrics: Vec<SweepMetric>,
    pub n_rep: usize,
    pub master_seed: u64,
    pub alpha: f64,
    /// Normalize utilization by the training set's pooled stationary
    /// distribution instead of each chain's own.
    pub pooled_normalizer: bool,
    pub output: Option<PathBuf>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            n_values: (2..=11).map(|e| 1 << e).collect(),
            k_values: vec![10],
            l_eval_values: vec![400],
            predictors: PredictorKind::MAIN.to_vec(),
            tables: Vec::new(),
            chain_roles: vec![EvalRole::Id, EvalRole::Ood],
            metrics: SweepMetric::ALL.to_vec(),
            n_rep: 30,
            master_seed: 0,
            alpha: 1.0,
            pooled_normalizer: false,
            output: None,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        if self.n_values.is_empty() || self.k_values.is_empty() || self.l_eval_values.is_empty() {
            return bad("grid axes N, k and l_eval must be non-empty".into());
        }
        if self.predictors.is_empty() && self.tables.is_empty() {
            return bad("no predictors or tables requested".into());
        }
        if self.metrics.is_empty() {
            return bad("no metrics requested".into());
        }
        if self.metrics.contains(&SweepMetric::ExpectedKl) && self.chain_roles.is_empty() {
            return bad("expected_kl needs at least one chain role".into());
        }
        if self.predictors.contains(&PredictorKind::External) {
            return bad("external predictors are given as tables, not as a predictor kind".into());
        }
        if let Some(l) = self.l_eval_values.iter().find(|&&l| l == 0) {
            return bad(format!("l_eval must be >= 1 (got {l})"));
        }
        if self.n_rep == 0 {
            return bad("n_rep must be >= 1".into());
        }
        for &k in &self.k_values {
            for &n in &self.n_values {
                DgpConfig {
                    k,
                    n_chains: n,
                    alpha: self.alpha,
                    master_seed: self.master_seed,
                    ..DgpConfig::default()
                }
                .validate()
                .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    /// Every row, old and new, in canonical order.
    pub rows: Vec<MetricRow>,
    pub computed_jobs: usize,
    pub skipped_jobs: usize,
}

#[derive(Clone, Debug)]
enum Subject {
    Builtin(PredictorKind),
    Table {
        table: Arc<PredictionTable>,
        step: String,
    },
}

impl Subject {
    fn label(&self) -> String {
        match self {
            Subject::Builtin(kind) => kind.to_string(),
            Subject::Table { table, .. } => format!("external:{}", table.label()),
        }
    }

    fn step(&self) -> &str {
        match self {
            Subject::Builtin(_) => "",
            Subject::Table { step, .. } => step,
        }
    }
}

#[derive(Clone, Debug)]
struct Job {
    k: usize,
    n: usize,
    l_eval: usize,
    subject: Subject,
}

type JobKey = (usize, usize, usize, usize, u64, String, String);

impl Job {
    fn key(&self, spec: &SweepSpec) -> JobKey {
        (
            self.k,
            self.n,
            self.l_eval,
            spec.n_rep,
            spec.master_seed,
            self.subject.label(),
            self.subject.step().to_string(),
        )
    }
}

fn row_job_key(r: &MetricRow) -> JobKey {
    (
        r.k,
        r.n,
        r.l_eval,
        r.n_rep,
        r.seed,
        r.predictor.clone(),
        r.step.clone(),
    )
}

fn load_tables(spec: &SweepSpec) -> Result<Vec<Subject>, ExperimentError> {
    spec.tables
        .iter()
        .map(|t| {
            let table = PredictionTable::load(&t.path)?;
            Ok(Subject::Table {
                table: Arc::new(table),
                step: t.step.clone(),
            })
        })
        .collect()
}

fn jobs(spec: &SweepSpec, tables: &[Subject]) -> Vec<Job> {
    let axis = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
    let mut out = Vec::new();
    for k in axis(&spec.k_values) {
        for n in axis(&spec.n_values) {
            for l_eval in axis(&spec.l_eval_values) {
                let builtins = spec.predictors.iter().map(|&p| Subject::Builtin(p));
                let external = tables.iter().filter(|s| match s {
                    Subject::Table { table, .. } => table.k() == k,
                    Subject::Builtin(_) => false,
                });
                for subject in builtins.chain(external.cloned()) {
                    out.push(Job {
                        k,
                        n,
                        l_eval,
                        subject,
                    });
                }
            }
        }
    }
    out
}

/// Rows (`metric`, `chain_role`) a job is expected to produce.
fn planned_metrics(spec: &SweepSpec) -> Vec<(SweepMetric, &'static str)> {
    let mut out = Vec::new();
    let roles: BTreeSet<EvalRole> = spec.chain_roles.iter().copied().collect();
    let metrics: BTreeSet<SweepMetric> = spec.metrics.iter().copied().collect();
    for m in metrics {
        match m {
            SweepMetric::ExpectedKl => {
                for r in &roles {
                    out.push((m, r.as_str()));
                }
            }
            SweepMetric::BigramUtilization => out.push((m, "ID")),
            SweepMetric::RetrievalProximity => out.push((m, "OOD")),
            SweepMetric::PhaseScore => out.push((m, "ID+OOD")),
        }
    }
    out
}

fn cell_sets(
    spec: &SweepSpec,
    k: usize,
    n: usize,
) -> Result<(Arc<ChainSet>, ChainSet), ExperimentError> {
    let config = DgpConfig {
        k,
        n_chains: n,
        alpha: spec.alpha,
        master_seed: spec.master_seed,
        ..DgpConfig::default()
    };
    let train = Arc::new(sample_chain_set(&config, ChainRole::Train)?);
    let random = sample_chain_set(&config, ChainRole::Random)?;
    Ok((train, random))
}

fn run_job(spec: &SweepSpec, job: &Job) -> Vec<MetricRow> {
    let label = job.subject.label();
    let hash = config_hash(&serde_json::json!({
        "k": job.k,
        "N": job.n,
        "l_eval": job.l_eval,
        "n_rep": spec.n_rep,
        "alpha": spec.alpha,
        "master_seed": spec.master_seed,
        "predictor": label,
        "step": job.subject.step(),
        "pooled_normalizer": spec.pooled_normalizer,
    }));
    let blank = |metric: &str, role: &str| MetricRow {
        predictor: label.clone(),
        chain_role: role.to_string(),
        n: job.n,
        k: job.k,
        l_eval: job.l_eval,
        n_rep: spec.n_rep,
        metric: metric.to_string(),
        value: None,
        stderr: None,
        clamp_count: 0,
        seed: spec.master_seed,
        config_hash: hash.clone(),
        step: job.subject.step().to_string(),
        phase: String::new(),
        error: String::new(),
    };
    let plan = planned_metrics(spec);
    let setup = cell_sets(spec, job.k, job.n).and_then(|(train, random)| {
        let model = match &job.subject {
            Subject::Builtin(kind) => build_predictor(
                *kind,
                job.k,
                &retrieval_index(&train),
                derive_seed(spec.master_seed, &[CONTROLS, job.k as u64]),
            )?,
            Subject::Table { table, .. } => Predictor::External(Arc::clone(table)),
        };
        Ok((train, random, model))
    });
    let (train, random, model) = match setup {
        Ok(v) => v,
        Err(e) => {
            return plan
                .iter()
                .map(|(m, role)| MetricRow {
                    error: e.to_string(),
                    ..blank(m.as_str(), role)
                })
                .collect()
        }
    };
    let seed = derive_seed(spec.master_seed, &[EVAL, job.k as u64]);
    let ood = ChainSource::OutOfDistribution {
        k: job.k,
        alpha: spec.alpha,
    };
    let normalizer = if spec.pooled_normalizer {
        UtilizationNormalizer::Pooled(&train)
    } else {
        UtilizationNormalizer::PerChain
    };
    let finish = |metric: &str, role: &str, r: &Result<MetricResult, EvalError>| match r {
        Ok(res) => MetricRow {
            value: Some(res.value),
            stderr: Some(res.stderr),
            clamp_count: res.meta.clamp_count,
            ..blank(metric, role)
        },
        Err(e) => MetricRow {
            error: e.to_string(),
            ..blank(metric, role)
        },
    };
    let mut utilization = None;
    let mut proximity = None;
    let mut rows = Vec::new();
    for (metric, role) in &plan {
        let name = metric.as_str();
        match metric {
            SweepMetric::ExpectedKl => {
                let source = if *role == "ID" {
                    ChainSource::InDistribution(&train)
                } else {
                    ood
                };
                let r = expected_kl_metric(&model, &source, job.l_eval, spec.n_rep, seed);
                rows.push(finish(name, role, &r));
            }
            SweepMetric::BigramUtilization => {
                let r = bigram_utilization(
                    &model,
                    &ChainSource::InDistribution(&train),
                    job.l_eval,
                    spec.n_rep,
                    seed,
                    normalizer,
                );
                rows.push(finish(name, role, &r));
                utilization = Some(r);
            }
            SweepMetric::RetrievalProximity => {
                let r = retrieval_proximity(&model, &train, &random, job.l_eval, spec.n_rep, seed);
                rows.push(finish(name, role, &r));
                proximity = Some(r);
            }
            SweepMetric::PhaseScore => {
                let u = utilization.take().unwrap_or_else(|| {
                    bigram_utilization(
                        &model,
                        &ChainSource::InDistribution(&train),
                        job.l_eval,
                        spec.n_rep,
                        seed,
                        normalizer,
                    )
                });
                let p = proximity.take().unwrap_or_else(|| {
                    retrieval_proximity(&model, &train, &random, job.l_eval, spec.n_rep, seed)
                });
                rows.push(match (&u, &p) {
                    (Ok(u), Ok(p)) => {
                        let score = phase_score(u, p);
                        MetricRow {
                            value: Some(score.label.code() as f64),
                            phase: if score.boundary {
                                format!("{} (boundary)", score.label)
                            } else {
                                score.label.to_string()
                            },
                            clamp_count: u.meta.clamp_count + p.meta.clamp_count,
                            ..blank(name, role)
                        }
                    }
                    (Err(e), _) | (_, Err(e)) => MetricRow {
                        error: e.to_string(),
                        ..blank(name, role)
                    },
                });
            }
        }
    }
    rows
}

/// Evaluate every job of `spec` not already present, without errors, in
/// `existing`. Jobs run on the current rayon pool; row order is canonical.
pub fn run_metric_sweep(
    spec: &SweepSpec,
    existing: &[MetricRow],
) -> Result<SweepOutcome, ExperimentError> {
    spec.validate()?;
    let tables = load_tables(spec)?;
    let all_jobs = jobs(spec, &tables);
    let mut done: BTreeMap<JobKey, bool> = BTreeMap::new();
    for r in existing {
        let ok = done.entry(row_job_key(r)).or_insert(true);
        *ok &= !r.is_error();
    }
    let (skip, todo): (Vec<&Job>, Vec<&Job>) = all_jobs
        .iter()
        .partition(|j| done.get(&j.key(spec)).copied().unwrap_or(false));
    let recomputed: BTreeSet<JobKey> = todo.iter().map(|j| j.key(spec)).collect();
    let fresh: Vec<Vec<MetricRow>> = todo.par_iter().map(|j| run_job(spec, j)).collect();
    let mut rows: Vec<MetricRow> = existing
        .iter()
        .filter(|r| !recomputed.contains(&row_job_key(r)))
        .cloned()
        .chain(fresh.into_iter().flatten())
        .collect();
    rows.sort_by_key(MetricRow::key);
    rows.dedup_by(|a, b| a.key() == b.key());
    Ok(SweepOutcome {
        rows,
        computed_jobs: todo.len(),
        skipped_jobs: skip.len(),
    })
}

/// Every context the sweep's metrics query, keyed
/// `k{k}/N{N}/l{l_eval}/{ID|OOD|ID-shuffled}/{replicate}/{state}`.
///
/// A prediction table answering all of them can stand in for any predictor
/// in the same sweep.
pub fn sweep_manifest(spec: &SweepSpec) -> Result<Vec<ContextManifest>, ExperimentError> {
    spec.validate()?;
    let metrics: BTreeSet<SweepMetric> = spec.metrics.iter().copied().collect();
    let wants_id = (metrics.contains(&SweepMetric::ExpectedKl)
        && spec.chain_roles.contains(&EvalRole::Id))
        || metrics.contains(&SweepMetric::BigramUtilization)
        || metrics.contains(&SweepMetric::PhaseScore);
    let wants_shuffled = metrics.contains(&SweepMetric::BigramUtilization)
        || metrics.contains(&SweepMetric::PhaseScore);
    let wants_ood = (metrics.contains(&SweepMetric::ExpectedKl)
        && spec.chain_roles.contains(&EvalRole::Ood))
        || metrics.contains(&SweepMetric::RetrievalProximity)
        || metrics.contains(&SweepMetric::PhaseScore);
    let axis = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
    let mut out = Vec::new();
    for k in axis(&spec.k_values) {
        let mut m = ContextManifest::new(k);
        let seed = derive_seed(spec.master_seed, &[EVAL, k as u64]);
        for n in axis(&spec.n_values) {
            let (train, _) = cell_sets(spec, k, n)?;
            for l in axis(&spec.l_eval_values) {
                let prefix = format!("k{k}/N{n}/l{l}");
                if wants_id {
                    for rep in
                        replicate_plan(&ChainSource::InDistribution(&train), l, spec.n_rep, seed)?
                    {
                        for (i, c) in rep.contexts.iter().enumerate() {
                            m.push(format!("{prefix}/ID/{}/{i}", rep.id), c);
                        }
                        if wants_shuffled {
                            for (i, c) in rep.shuffled_contexts(seed).iter().enumerate() {
                                m.push(format!("{prefix}/ID-shuffled/{}/{i}", rep.id), c);
                            }
                        }
                    }
                }
                if wants_ood {
                    let ood = ChainSource::OutOfDistribution {
                        k,
                        alpha: spec.alpha,
                    };
                    for rep in replicate_plan(&ood, l, spec.n_rep, seed)? {
                        for (i, c) in rep.contexts.iter().enumerate() {
                            m.push(format!("{prefix}/OOD/{}/{i}", rep.id), c);
                        }
                    }
                }
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// Run the sweep and write the merged table to `path`. With `resume`,
/// rows already in `path` are kept and their jobs skipped.
pub fn run_sweep_to_file(
    spec: &SweepSpec,
    path: &Path,
    resume: bool,
) -> Result<SweepOutcome, ExperimentError> {
    let existing = if resume && path.exists() {
        read_metric_rows(fs::File::open(path)?)?
    } else {
        Vec::new()
    };
    let outcome = run_metric_sweep(spec, &existing)?;
    let mut buf = Vec::new();
    write_metric_rows(&mut buf, &outcome.rows)?;
    write_atomic(path, &buf)?;
    Ok(outcome)
}
