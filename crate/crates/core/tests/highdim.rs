use mixlab::experiments::{run_highdim_experiment, HighDimRow, HighDimSpec};

/// Smallest `k` at which the nearest neighbour is farther than the mean.
fn crossover(rows: &[HighDimRow], n: usize) -> Option<usize> {
    rows.iter()
        .filter(|r| r.n == n && r.nn_kl_mean > r.mean_kl_mean)
        .map(|r| r.k)
        .min()
}

#[test]
fn crossover_moves_right_with_more_candidates() {
    let rows = run_highdim_experiment(&HighDimSpec::default()).unwrap();
    let mut last = 0;
    for n in HighDimSpec::default().n_values {
        let k_star = crossover(&rows, n).unwrap_or(usize::MAX);
        assert!(k_star >= last, "k*({n}) = {k_star} after {last}");
        last = k_star;
    }
}

#[test]
fn nearest_neighbour_never_worsens_with_n() {
    let spec = HighDimSpec {
        k_values: vec![3, 20],
        n_seeds: 10,
        ..HighDimSpec::default()
    };
    let rows = run_highdim_experiment(&spec).unwrap();
    for pair in rows.windows(2).filter(|w| w[0].k == w[1].k) {
        assert!(pair[1].nn_kl_mean <= pair[0].nn_kl_mean);
        assert!(pair[1].nn_kl_rev_mean <= pair[0].nn_kl_rev_mean);
    }
}
