use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use mixlab::dgp::{
    sample_chain_set, sample_sequence, save_chain_set, ChainRole, ChainSet, ContextSequence,
    DgpConfig,
};
use mixlab::evaluation::{read_metric_rows, write_metric_rows, MetricRow};
use mixlab::experiments::{
    build_predictor, config_hash, run_highdim_experiment, run_lia_study, run_metric_sweep,
    sweep_manifest, write_highdim_rows, ExperimentError,
};
use mixlab::predictors::{NextTokenModel, PredictionTable, Predictor, RetrievalIndex};
use mixlab::seed::{derive_seed, tag};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{
    load, AnswerArgs, AnswerConfig, EvalArgs, EvalConfig, GenerateArgs, GenerateConfig,
    HighDimArgs, HighDimConfig, LiaArgs, LiaConfig, Seeded, SweepArgs, SweepConfig,
};
use crate::{Common, Failure};

const SEQUENCES: u64 = tag("cli-sequences");
const SWEEP_CONTROLS: u64 = tag("sweep-controls");
const ANSWER_CONTROLS: u64 = tag("cli-answer-controls");
/// Missing manifest keys listed before the rest are summarized.
const MISSING_SHOWN: usize = 50;

struct Run<T> {
    config: T,
    seed: u64,
    hash: String,
    out: PathBuf,
}

impl<T: Serialize> Run<T> {
    fn path(&self, stem: &str, ext: &str) -> PathBuf {
        self.out.join(format!("{stem}-{}.{ext}", self.hash))
    }

    /// Write the effective config next to the outputs.
    fn echo(&self, command: &str) -> Result<(), Failure> {
        let text = toml::to_string(&self.config).context("serializing config")?;
        write_atomic(&self.path(command, "toml"), text.as_bytes())?;
        Ok(())
    }
}

fn prepare<T>(common: &Common, apply: impl FnOnce(&mut T)) -> Result<Run<T>, Failure>
where
    T: Seeded + DeserializeOwned + Default,
{
    let mut config: T = load(common.config.as_deref())?;
    apply(&mut config);
    if common.seed.is_some() {
        *config.seed_slot() = common.seed;
    }
    let seed = config.resolve_seed();
    let hash = config_hash(&config);
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    Ok(Run {
        config,
        seed,
        hash,
        out: common.out.clone(),
    })
}

fn with_pool<R: Send>(common: &Common, f: impl FnOnce() -> R + Send) -> Result<R, Failure> {
    if common.jobs == Some(0) {
        return Err(Failure::invalid("--jobs must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    Ok(pool.install(f))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn train_set(k: usize, n_chains: usize, alpha: f64, seed: u64) -> Result<Arc<ChainSet>, Failure> {
    let config = DgpConfig {
        k,
        n_chains,
        alpha,
        master_seed: seed,
        ..DgpConfig::default()
    };
    config.validate().map_err(Failure::invalid)?;
    Ok(Arc::new(sample_chain_set(&config, ChainRole::Train)?))
}

pub fn generate(common: &Common, args: GenerateArgs) -> Result<(), Failure> {
    let run = prepare::<GenerateConfig>(common, |c| args.apply(c))?;
    let c = &run.config;
    c.validate()?;
    let set = sample_chain_set(&c.dgp(), c.role)?;
    run.echo("generate")?;
    let chains = run.path("chains", "json");
    save_chain_set(&set, &chains)?;
    println!("{}", chains.display());
    if c.emit_sequences > 0 {
        let mut buf = Vec::new();
        for i in 0..c.emit_sequences {
            let s = sample_sequence(&set, c.l, derive_seed(run.seed, &[SEQUENCES, i as u64]));
            let line = serde_json::json!({"chain": s.source_chain, "tokens": s.tokens});
            serde_json::to_writer(&mut buf, &line).context("serializing sequence")?;
            buf.push(b'\n');
        }
        let path = run.path("sequences", "jsonl");
        write_atomic(&path, &buf)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn print_rows(rows: &[MetricRow]) {
    for r in rows {
        let value = match (r.value, r.stderr) {
            _ if r.is_error() => format!("error: {}", r.error),
            (Some(v), Some(se)) => format!("{v:.6} ± {se:.6}"),
            (Some(v), None) => format!("{v:.6}"),
            _ => String::new(),
        };
        let phase = if r.phase.is_empty() {
            String::new()
        } else {
            format!(" [{}]", r.phase)
        };
        println!(
            "k={} N={} l_eval={} {:<24} {:<6} {:<20} {value}{phase}",
            r.k, r.n, r.l_eval, r.predictor, r.chain_role, r.metric
        );
    }
}

fn write_rows(path: &Path, rows: &[MetricRow]) -> Result<(), Failure> {
    let mut buf = Vec::new();
    write_metric_rows(&mut buf, rows)?;
    write_atomic(path, &buf)?;
    Ok(())
}

/// Each predictor's output on the empty context, or why it has none.
fn probe_empty(run: &Run<EvalConfig>) -> Result<PathBuf, Failure> {
    let c = &run.config;
    let set = train_set(c.k, c.n_chains, c.alpha, run.seed)?;
    let index = Arc::new(RetrievalIndex::new(set));
    let control_seed = derive_seed(run.seed, &[SWEEP_CONTROLS, c.k as u64]);
    let mut models: Vec<Result<Predictor, String>> = c
        .predictors
        .iter()
        .map(|&kind| build_predictor(kind, c.k, &index, control_seed).map_err(|e| e.to_string()))
        .collect();
    for path in &c.tables {
        models.push(
            PredictionTable::load(path)
                .map(|t| Predictor::External(Arc::new(t)))
                .map_err(|e| e.to_string()),
        );
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["predictor".to_string()];
    header.extend((0..c.k).map(|j| format!("p{j}")));
    header.push("error".into());
    w.write_record(&header).context("writing probe")?;
    let empty = ContextSequence::default();
    for (i, model) in models.iter().enumerate() {
        let label = model
            .as_ref()
            .map(NextTokenModel::label)
            .unwrap_or_else(|_| format!("#{i}"));
        let out = model
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|m| m.predict(&empty).map_err(|e| e.to_string()));
        let mut record = vec![label.clone()];
        match &out {
            Ok(p) => {
                record.extend(p.iter().map(|x| x.to_string()));
                record.push(String::new());
                println!("empty context {label}: {p:?}");
            }
            Err(e) => {
                record.extend(std::iter::repeat_n(String::new(), c.k));
                record.push(e.clone());
                println!("empty context {label}: {e}");
            }
        }
        w.write_record(&record).context("writing probe")?;
    }
    let path = run.path("probe", "csv");
    write_atomic(&path, &w.into_inner().context("writing probe")?)?;
    Ok(path)
}

pub fn eval(common: &Common, args: EvalArgs) -> Result<(), Failure> {
    let run = prepare::<EvalConfig>(common, |c| args.apply(c))?;
    let spec = run.config.sweep().spec();
    spec.validate()?;
    run.echo("eval")?;
    let outcome = with_pool(common, || run_metric_sweep(&spec, &[]))??;
    print_rows(&outcome.rows);
    let path = run.path("eval", "csv");
    write_rows(&path, &outcome.rows)?;
    println!("{}", path.display());
    if run.config.probe_empty {
        println!("{}", probe_empty(&run)?.display());
    }
    Ok(())
}

pub fn sweep(
    common: &Common,
    args: SweepArgs,
    resume: bool,
    resume_from: Option<PathBuf>,
    manifest_only: bool,
) -> Result<(), Failure> {
    let run = prepare::<SweepConfig>(common, |c| args.apply(c))?;
    let spec = run.config.spec();
    spec.validate()?;
    run.echo("sweep")?;
    if manifest_only {
        for m in with_pool(common, || sweep_manifest(&spec))?? {
            let path = run.path(&format!("sweep-manifest-k{}", m.k()), "jsonl");
            m.save(&path)?;
            println!("{}", path.display());
        }
        return Ok(());
    }
    let path = run.path("sweep", "csv");
    let source = resume_from.or_else(|| resume.then(|| path.clone()));
    let existing = match source {
        None => Vec::new(),
        Some(from) => {
            if from.exists() {
                let file =
                    fs::File::open(&from).with_context(|| format!("opening {}", from.display()))?;
                read_metric_rows(file)?
            } else {
                eprintln!("nothing to resume at {}", from.display());
                Vec::new()
            }
        }
    };
    let outcome = with_pool(common, || run_metric_sweep(&spec, &existing))??;
    write_rows(&path, &outcome.rows)?;
    eprintln!(
        "{} jobs computed, {} skipped, {} rows",
        outcome.computed_jobs,
        outcome.skipped_jobs,
        outcome.rows.len()
    );
    println!("{}", path.display());
    Ok(())
}

pub fn highdim(common: &Common, args: HighDimArgs) -> Result<(), Failure> {
    let run = prepare::<HighDimConfig>(common, |c| args.apply(c))?;
    let spec = run.config.spec();
    spec.validate()?;
    run.echo("highdim")?;
    let rows = with_pool(common, || run_highdim_experiment(&spec))??;
    for r in &rows {
        println!(
            "k={:<4} N={:<5} nn {:.4} ± {:.4}  mean {:.4} ± {:.4}",
            r.k, r.n, r.nn_kl_mean, r.nn_kl_stderr, r.mean_kl_mean, r.mean_kl_stderr
        );
    }
    let mut buf = Vec::new();
    write_highdim_rows(&mut buf, &rows)?;
    let path = run.path("highdim", "csv");
    write_atomic(&path, &buf)?;
    println!("{}", path.display());
    Ok(())
}

fn lia_run(common: &Common, args: LiaArgs) -> Result<Run<LiaConfig>, Failure> {
    let run = prepare::<LiaConfig>(common, |c| args.apply(c))?;
    run.config.spec().validate()?;
    Ok(run)
}

pub fn manifest(common: &Common, args: LiaArgs) -> Result<(), Failure> {
    let run = lia_run(common, args)?;
    let spec = run.config.spec();
    run.echo("manifest")?;
    let m = spec.manifest(&*spec.train_set()?)?;
    let path = run.path("manifest", "jsonl");
    m.save(&path)?;
    eprintln!("{} contexts", m.len());
    println!("{}", path.display());
    Ok(())
}

pub fn lia(common: &Common, args: LiaArgs) -> Result<(), Failure> {
    let run = lia_run(common, args)?;
    let c = &run.config;
    let spec = c.spec();
    let target = match (&c.target, c.target_predictor) {
        (Some(path), None) => Predictor::External(Arc::new(
            PredictionTable::load(path)
                .with_context(|| format!("loading target {}", path.display()))?,
        )),
        (None, Some(kind)) => {
            let index = Arc::new(RetrievalIndex::new(spec.train_set()?));
            build_predictor(kind, c.k, &index, derive_seed(run.seed, &[ANSWER_CONTROLS]))
                .map_err(Failure::invalid)?
        }
        _ => {
            return Err(Failure::invalid(
                "give exactly one of --target and --target-predictor",
            ))
        }
    };
    if target.k() != c.k {
        return Err(Failure::invalid(format!(
            "target covers {} states, config has k = {}",
            target.k(),
            c.k
        )));
    }
    run.echo("lia")?;
    let result = match with_pool(common, || run_lia_study(&spec, &target))? {
        Err(ExperimentError::MissingContexts(entries)) => {
            eprintln!(
                "target has no answer for {} manifest contexts:",
                entries.len()
            );
            for e in entries.iter().take(MISSING_SHOWN) {
                eprintln!("  {}", e.cell_key);
            }
            if entries.len() > MISSING_SHOWN {
                eprintln!("  ... and {} more", entries.len() - MISSING_SHOWN);
            }
            return Err(Failure::Runtime(anyhow::anyhow!(
                "missing manifest answers"
            )));
        }
        other => other?,
    };
    for (label, w) in result.fit.predictor_kinds.iter().zip(&result.fit.weights) {
        println!("weight {label:<26} {w:.6}");
    }
    println!("residual_l2 {:.3e}", result.fit.residual_l2);
    let p = &result.predicted_ood_kl;
    println!("predicted OOD KL {:.6} ± {:.6}", p.value, p.stderr);
    if let Some(a) = &result.actual_ood_kl {
        println!("actual OOD KL    {:.6} ± {:.6}", a.value, a.stderr);
    }
    let fit_path = run.path("lia", "json");
    write_atomic(&fit_path, result.fit.to_json()?.as_bytes())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &result.replicates {
        w.serialize(r).context("writing OOD table")?;
    }
    let ood_path = run.path("lia-ood", "csv");
    write_atomic(&ood_path, &w.into_inner().context("writing OOD table")?)?;
    println!("{}", fit_path.display());
    println!("{}", ood_path.display());
    Ok(())
}

pub fn answer(common: &Common, args: AnswerArgs) -> Result<(), Failure> {
    let run = prepare::<AnswerConfig>(common, |c| args.apply(c))?;
    let c = &run.config;
    let (Some(manifest), Some(kind)) = (&c.manifest, c.predictor) else {
        return Err(Failure::invalid("--manifest and --predictor are required"));
    };
    let set = train_set(c.k, c.n_chains, c.alpha, run.seed)?;
    let index = Arc::new(RetrievalIndex::new(set));
    let model = build_predictor(kind, c.k, &index, derive_seed(run.seed, &[ANSWER_CONTROLS]))
        .map_err(Failure::invalid)?;
    let m = mixlab::experiments::ContextManifest::load(manifest, c.k)?;
    run.echo("answer")?;
    let table = with_pool(common, || m.answer(&model, kind.as_str()))??;
    let path = run.path(&format!("answers-{kind}"), "jsonl");
    let mut buf = Vec::new();
    table.write_to(&mut buf)?;
    write_atomic(&path, &buf)?;
    eprintln!("{} contexts answered", table.len());
    println!("{}", path.display());
    Ok(())
}
