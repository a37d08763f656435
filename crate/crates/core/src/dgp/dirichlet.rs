//! Symmetric Dirichlet sampling.
//!
//! `Dirichlet(1_k)` is the normalized vector of `k` i.i.d. unit exponentials.
//! Other concentrations normalize Gamma(alpha, 1) draws. For `alpha < 1` the
//! Gamma draws are formed in log space from `G(alpha + 1) * U^(1/alpha)`,
//! which keeps tiny concentrations from underflowing to an all-zero vector.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

/// Draw one vector from the symmetric Dirichlet with concentration `alpha`.
///
/// `alpha` must be positive and finite; `dim` must be at least 1.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: f64, dim: usize) -> Vec<f64> {
    assert!(dim >= 1, "Dirichlet dimension must be positive");
    assert!(alpha > 0.0 && alpha.is_finite(), "alpha must be positive");
    if dim == 1 {
        return vec![1.0];
    }
    if alpha == 1.0 {
        let draws: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
        return normalize(draws);
    }
    if alpha >= 1.0 {
        let gamma = Gamma::new(alpha, 1.0).expect("alpha validated above");
        let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        return normalize(draws);
    }
    let boosted = Gamma::new(alpha + 1.0, 1.0).expect("alpha validated above");
    let logs: Vec<f64> = (0..dim)
        .map(|_| {
            let g: f64 = boosted.sample(rng);
            let u: f64 = rng.random::<f64>();
            // u in [0, 1); map to (0, 1] so ln stays finite
            g.ln() + (1.0 - u).ln() / alpha
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    normalize(logs.iter().map(|l| (l - max).exp()).collect())
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}
