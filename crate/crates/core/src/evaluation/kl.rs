//! KL divergences between probability vectors and transition matrices.
//!
//! Both arguments are clamped below at [`CLAMP_FLOOR`] before taking logs.
//! Every entry that needed clamping is counted so callers can report it.

use super::EvalError;
use crate::dgp::TransitionMatrix;

/// Lower bound applied to both arguments of every log.
pub const CLAMP_FLOOR: f64 = 1e-12;

/// A divergence value plus the number of clamped entries behind it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KlValue {
    pub value: f64,
    pub clamp_count: usize,
}

/// `Σ_j p_j log(p_j / q_j)` with clamping.
pub fn row_kl(p: &[f64], q: &[f64]) -> KlValue {
    let mut value = 0.0;
    let mut clamp_count = 0;
    for (&pj, &qj) in p.iter().zip(q) {
        if pj < CLAMP_FLOOR {
            clamp_count += 1;
        }
        if qj < CLAMP_FLOOR {
            clamp_count += 1;
        }
        let pc = pj.max(CLAMP_FLOOR);
        let qc = qj.max(CLAMP_FLOOR);
        value += pc * (pc / qc).ln();
    }
    KlValue { value, clamp_count }
}

/// Stationary-weighted KL `Σ_i π*_i KL(estimate_i ‖ truth_i)`.
pub fn expected_kl_rows(
    estimate: &[Vec<f64>],
    truth: &TransitionMatrix,
) -> Result<KlValue, EvalError> {
    let k = truth.k();
    check_shape(estimate, k)?;
    let mut out = KlValue::default();
    for (i, row) in estimate.iter().enumerate() {
        let kl = row_kl(row, truth.row(i));
        out.value += truth.stationary()[i] * kl.value;
        out.clamp_count += kl.clamp_count;
    }
    Ok(out)
}

/// Row-averaged KL `(1/k) Σ_i KL(a_i ‖ b_i)` between two candidate matrices.
pub fn uniform_matrix_kl<A, B>(a: &[A], b: &[B]) -> Result<KlValue, EvalError>
where
    A: AsRef<[f64]>,
    B: AsRef<[f64]>,
{
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} rows vs {} rows",
            a.len(),
            b.len()
        )));
    }
    let k = a.len();
    let mut out = KlValue::default();
    for (ra, rb) in a.iter().zip(b) {
        let (ra, rb) = (ra.as_ref(), rb.as_ref());
        if ra.len() != rb.len() {
            return Err(EvalError::ShapeMismatch(format!(
                "row lengths {} vs {}",
                ra.len(),
                rb.len()
            )));
        }
        let kl = row_kl(ra, rb);
        out.value += kl.value / k as f64;
        out.clamp_count += kl.clamp_count;
    }
    Ok(out)
}

pub(crate) fn check_shape(rows: &[Vec<f64>], k: usize) -> Result<(), EvalError> {
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(EvalError::ShapeMismatch(format!(
            "estimate is not {k} x {k}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_have_zero_kl() {
        let t = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let kl = expected_kl_rows(&t.to_rows(), &t).unwrap();
        assert!(kl.value.abs() < 1e-12);
        assert_eq!(kl.clamp_count, 0);
    }

    #[test]
    fn uniform_against_two_state_chain() {
        // π* = [5/6, 1/6]; row 1 of T* is already uniform.
        let t = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let est = vec![vec![0.5, 0.5]; 2];
        let row0 = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let kl = expected_kl_rows(&est, &t).unwrap();
        assert!((kl.value - 5.0 / 6.0 * row0).abs() < 1e-14);
    }

    #[test]
    fn zeros_are_clamped_and_counted() {
        let t = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let est = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let kl = expected_kl_rows(&est, &t).unwrap();
        assert!(kl.value.is_finite());
        assert_eq!(kl.clamp_count, 1);
        let est = vec![vec![0.1, 0.9], vec![0.5, 0.5]];
        let t = TransitionMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let kl = expected_kl_rows(&est, &t).unwrap();
        assert!(kl.value.is_finite() && kl.value > 10.0);
    }

    #[test]
    fn shape_mismatch() {
        let t = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            expected_kl_rows(&[vec![1.0]], &t),
            Err(EvalError::ShapeMismatch(_))
        ));
        assert!(uniform_matrix_kl(&[vec![0.5, 0.5]], &[vec![1.0]]).is_err());
    }
}
