//! Stationary distribution of a row-stochastic matrix.
//!
//! Solves the overdetermined system `[(Tᵀ − I); 1ᵀ] π = [0; 1]` by
//! Householder QR with two rounds of iterative refinement. A rank-deficient
//! `R` means the unit eigenvalue is not simple. If the QR answer misses the
//! residual contract, a lazy power iteration on `(T + I) / 2` is tried
//! before giving up.

use super::{DgpError, STATIONARY_RESIDUAL_TOLERANCE};

const RANK_TOLERANCE: f64 = 1e-12;
const POWER_ITERATIONS: usize = 100_000;

/// Stationary distribution of the `k x k` row-major matrix `entries`.
pub fn stationary_distribution(k: usize, entries: &[f64]) -> Result<Vec<f64>, DgpError> {
    assert_eq!(entries.len(), k * k, "entries must be k x k");
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let qr = AugmentedQr::new(k, entries)?;
    let mut pi = qr.solve(&rhs(k));
    for _ in 0..2 {
        let r = augmented_residual(k, entries, &pi);
        let delta = qr.solve(&r);
        pi.iter_mut().zip(&delta).for_each(|(p, d)| *p += d);
    }
    if let Some(pi) = finalize(k, entries, pi) {
        return Ok(pi);
    }
    power_iteration(k, entries).ok_or_else(|| {
        DgpError::NonUniqueStationary(format!(
            "residual did not reach {STATIONARY_RESIDUAL_TOLERANCE:e}"
        ))
    })
}

/// `‖π − πT‖_∞`.
pub(crate) fn stationary_residual(k: usize, entries: &[f64], pi: &[f64]) -> f64 {
    (0..k)
        .map(|j| {
            let pushed: f64 = (0..k).map(|i| pi[i] * entries[i * k + j]).sum();
            (pi[j] - pushed).abs()
        })
        .fold(0.0, f64::max)
}

fn rhs(k: usize) -> Vec<f64> {
    let mut b = vec![0.0; k + 1];
    b[k] = 1.0;
    b
}

fn augmented_matrix(k: usize, entries: &[f64]) -> Vec<Vec<f64>> {
    // column-major: a[c][r]
    (0..k)
        .map(|c| {
            let mut col: Vec<f64> = (0..k).map(|r| entries[c * k + r]).collect();
            col[c] -= 1.0;
            col.push(1.0);
            col
        })
        .collect()
}

fn augmented_residual(k: usize, entries: &[f64], pi: &[f64]) -> Vec<f64> {
    let a = augmented_matrix(k, entries);
    let mut r = rhs(k);
    for (c, col) in a.iter().enumerate() {
        for (ri, v) in col.iter().enumerate() {
            r[ri] -= v * pi[c];
        }
    }
    r
}

struct AugmentedQr {
    k: usize,
    /// Householder vectors, one per column, each of length `k + 1 - c`.
    reflectors: Vec<Vec<f64>>,
    /// Upper triangle, row-major `k x k`.
    r: Vec<f64>,
}

impl AugmentedQr {
    fn new(k: usize, entries: &[f64]) -> Result<Self, DgpError> {
        let m = k + 1;
        let mut a = augmented_matrix(k, entries);
        let scale = a
            .iter()
            .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(1.0, f64::max);
        let mut reflectors = Vec::with_capacity(k);
        let mut r = vec![0.0; k * k];
        for c in 0..k {
            let x: Vec<f64> = a[c][c..m].to_vec();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= RANK_TOLERANCE * scale {
                return Err(DgpError::NonUniqueStationary(format!(
                    "augmented system is rank deficient at column {c}"
                )));
            }
            let alpha = if x[0] >= 0.0 { -norm } else { norm };
            let mut v = x;
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|t| t * t).sum();
            for col in a.iter_mut().skip(c) {
                let dot: f64 = v.iter().zip(&col[c..m]).map(|(p, q)| p * q).sum();
                let f = 2.0 * dot / vnorm2;
                col[c..m]
                    .iter_mut()
                    .zip(&v)
                    .for_each(|(t, vi)| *t -= f * vi);
            }
            for (j, col) in a.iter().enumerate().skip(c) {
                r[c * k + j] = col[c];
            }
            reflectors.push(v);
        }
        Ok(Self { k, reflectors, r })
    }

    /// Least-squares solution of `A x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut y = b.to_vec();
        for (c, v) in self.reflectors.iter().enumerate() {
            let vnorm2: f64 = v.iter().map(|t| t * t).sum();
            let dot: f64 = v.iter().zip(&y[c..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            y[c..].iter_mut().zip(v).for_each(|(t, vi)| *t -= f * vi);
        }
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| self.r[i * k + j] * x[j]).sum();
            x[i] = (y[i] - s) / self.r[i * k + i];
        }
        x
    }
}

fn finalize(k: usize, entries: &[f64], mut pi: Vec<f64>) -> Option<Vec<f64>> {
    if pi.iter().any(|p| !p.is_finite() || *p < -1e-10) {
        return None;
    }
    pi.iter_mut().for_each(|p| *p = p.max(0.0));
    let sum: f64 = pi.iter().sum();
    if sum <= 0.0 {
        return None;
    }
    pi.iter_mut().for_each(|p| *p /= sum);
    (stationary_residual(k, entries, &pi) <= STATIONARY_RESIDUAL_TOLERANCE).then_some(pi)
}

fn power_iteration(k: usize, entries: &[f64]) -> Option<Vec<f64>> {
    let mut pi = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    for _ in 0..POWER_ITERATIONS {
        for j in 0..k {
            let pushed: f64 = (0..k).map(|i| pi[i] * entries[i * k + j]).sum();
            next[j] = 0.5 * (pi[j] + pushed);
        }
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= sum);
        std::mem::swap(&mut pi, &mut next);
        if stationary_residual(k, entries, &pi) <= STATIONARY_RESIDUAL_TOLERANCE * 0.1 {
            return Some(pi);
        }
    }
    None
}
