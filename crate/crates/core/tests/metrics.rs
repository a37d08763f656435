use std::sync::Arc;

use mixlab::dgp::{sample_chain_set, sample_transition_matrix, ChainRole, ChainSet, DgpConfig};
use mixlab::evaluation::{
    bigram_utilization, estimate_transition_matrix, expected_kl_metric, retrieval_proximity,
    ChainSource, MetricRow, UtilizationNormalizer,
};
use mixlab::experiments::{run_metric_sweep, EvalRole, SweepMetric, SweepSpec};
use mixlab::predictors::{Predictor, PredictorKind};
use mixlab::seed::rng_from_seed;

fn set(k: usize, n: usize, seed: u64, role: ChainRole) -> ChainSet {
    let config = DgpConfig {
        k,
        n_chains: n,
        master_seed: seed,
        ..DgpConfig::default()
    };
    sample_chain_set(&config, role).unwrap()
}

#[test]
fn bigram_inference_is_consistent_on_long_contexts() {
    let k = 10;
    let truth = sample_transition_matrix(k, 1.0, &mut rng_from_seed(227)).unwrap();
    let est = estimate_transition_matrix(&Predictor::BiInf { k }, &truth, 10_000, 228).unwrap();
    let gap = est
        .entries
        .iter()
        .zip(truth.rows())
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(gap <= 0.05, "max entry gap {gap}");
}

#[test]
fn single_chain_retrieval_recovers_the_chain() {
    let train = Arc::new(set(6, 1, 228, ChainRole::Train));
    let truth = train.matrix(0).clone();
    let p = &Predictor::main_set(&train)[0];
    let est = estimate_transition_matrix(p, &truth, 50, 3).unwrap();
    for (a, b) in est.entries.iter().zip(truth.rows()) {
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12));
    }
    let id = ChainSource::InDistribution(&train);
    assert!(expected_kl_metric(p, &id, 50, 5, 1).unwrap().value < 1e-9);
}

#[test]
fn bigram_inference_uses_transition_order() {
    let train = set(10, 64, 245, ChainRole::Train);
    let id = ChainSource::InDistribution(&train);
    let u = bigram_utilization(
        &Predictor::BiInf { k: 10 },
        &id,
        400,
        30,
        245,
        UtilizationNormalizer::PerChain,
    )
    .unwrap();
    assert!(u.value >= 0.5, "utilization {}", u.value);
}

#[test]
fn inference_carries_no_train_set_information() {
    let train = set(10, 64, 255, ChainRole::Train);
    let random = set(10, 64, 255, ChainRole::Random);
    let p =
        retrieval_proximity(&Predictor::BiInf { k: 10 }, &train, &random, 400, 30, 255).unwrap();
    assert!(p.value <= 0.1, "proximity {}", p.value);
}

fn kl_sweep(
    n_values: Vec<usize>,
    l_eval_values: Vec<usize>,
    predictors: Vec<PredictorKind>,
) -> Vec<MetricRow> {
    let spec = SweepSpec {
        n_values,
        k_values: vec![10],
        l_eval_values,
        predictors,
        metrics: vec![SweepMetric::ExpectedKl],
        n_rep: 30,
        master_seed: 368,
        ..SweepSpec::default()
    };
    run_metric_sweep(&spec, &[]).unwrap().rows
}

fn find<'a>(
    rows: &'a [MetricRow],
    predictor: &str,
    role: EvalRole,
    n: usize,
    l: usize,
) -> &'a MetricRow {
    rows.iter()
        .find(|r| {
            r.predictor == predictor && r.chain_role == role.as_str() && r.n == n && r.l_eval == l
        })
        .unwrap_or_else(|| panic!("no row for {predictor} {role:?} N={n} l={l}"))
}

#[test]
fn bigram_inference_has_no_id_ood_gap() {
    let rows = kl_sweep(vec![64], vec![400], vec![PredictorKind::BiInf]);
    let id = find(&rows, "bi_inf", EvalRole::Id, 64, 400);
    let ood = find(&rows, "bi_inf", EvalRole::Ood, 64, 400);
    let (a, b) = (id.value.unwrap(), ood.value.unwrap());
    let se = id.stderr.unwrap().hypot(ood.stderr.unwrap());
    assert!((a - b).abs() < 2.0 * se, "ID {a} vs OOD {b}, stderr {se}");
}

#[test]
fn small_sets_make_retrieval_worse_out_of_distribution() {
    let rows = kl_sweep(
        vec![4, 64],
        vec![25, 400],
        vec![PredictorKind::BiRet, PredictorKind::BiInf],
    );
    let v = |p: &str, role, n, l| find(&rows, p, role, n, l).value.unwrap();
    assert!(v("bi_ret", EvalRole::Ood, 4, 400) > v("bi_inf", EvalRole::Ood, 4, 400));
    for n in [4, 64] {
        // bi_inf improves with context everywhere; bi_ret only in distribution
        assert!(v("bi_inf", EvalRole::Ood, n, 400) < v("bi_inf", EvalRole::Ood, n, 25));
        assert!(v("bi_inf", EvalRole::Id, n, 400) < v("bi_inf", EvalRole::Id, n, 25));
        assert!(v("bi_ret", EvalRole::Id, n, 400) < v("bi_ret", EvalRole::Id, n, 25));
    }
}
